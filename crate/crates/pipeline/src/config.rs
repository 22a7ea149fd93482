//! Run configuration: profile defaults overlaid with a TOML file.
//!
//! Every section rejects unknown keys. A config file only needs the keys it
//! changes; everything else comes from the selected profile.

use std::path::{Path, PathBuf};

use ltg_core::corpus::MAX_SUPPORTED_LEN;
use ltg_core::diffcore::{Activation, OptimizerConfig};
use ltg_core::latentgan::{GanArchitecture, GanConfig, ScheduleMode, DEFAULT_LAMBDA0, DEFAULT_RATIO_EPS};
use ltg_core::rlfinetune::{ReturnsMode, RlConfig, ValueHeadConfig};
use ltg_core::seqvae::VaeConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Small models and scaled epoch counts; minutes on one CPU core.
    Desk,
    /// The published hyperparameters verbatim.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// One sentence per line. Without it a templated-grammar corpus of
    /// `synthetic_sentences` lines is generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Dev/test files; when absent they are cut from the training lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub synthetic_sentences: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub min_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSection {
    pub architecture: GanArchitecture,
    pub training: GanConfig,
    /// Sentences per side for best-epoch selection by BLEU + BBLEU; 0 keeps
    /// the last epoch.
    pub selection_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueHeadSection {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Generated sentences used to fit the head.
    pub samples: usize,
    /// Fraction of `samples` held out for the reported MAE.
    pub holdout_fraction: f64,
}

impl ValueHeadSection {
    pub fn head(&self) -> ValueHeadConfig {
        ValueHeadConfig {
            hidden_dims: self.hidden_dims.clone(),
            activation: self.activation,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    /// The finetuned decoder if `finetune-rl` has run, else the VAE decoder.
    Auto,
    Base,
    Rl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub samples: usize,
    pub temperature: f64,
    pub greedy: bool,
    pub model: ModelChoice,
    pub pca_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    /// VAE epochs for the deliberately under-trained base model.
    pub vae_epochs: usize,
    pub short_epochs: usize,
    pub long_epochs: usize,
    /// Finetuning learning rate, higher than `rlfinetune.learning_rate`.
    pub learning_rate: f64,
    /// Sentences generated per model column.
    pub eval_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub seqvae: VaeConfig,
    pub latentgan: GanSection,
    pub value_head: ValueHeadSection,
    pub rlfinetune: RlConfig,
    pub evalmetrics: EvalSection,
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn desk() -> Self {
        let leaky = Activation::LeakyRelu { slope: 0.2 };
        RunConfig {
            seed: 7,
            corpus: CorpusSection {
                train: None,
                dev: None,
                test: None,
                synthetic_sentences: 600,
                dev_fraction: 0.1,
                test_fraction: 0.1,
                min_count: 1,
            },
            seqvae: VaeConfig {
                embed_dim: 32,
                hidden_dim: 64,
                latent_dim: 64,
                max_len: 32,
                epochs: 30,
                batch_size: 16,
                optimizer: OptimizerConfig::momentum(0.05).with_clip(5.0),
                beta_target: 0.1,
                annealing_ratio: 0.5,
                ratio_increase: 0.25,
            },
            latentgan: GanSection {
                architecture: GanArchitecture { noise_dim: 32, hidden_dim: 128, blocks: 2, activation: leaky, gp_lambda: 10.0 },
                training: GanConfig {
                    epochs: 60,
                    batch_size: 64,
                    generator_optimizer: OptimizerConfig::momentum(1e-3).with_clip(10.0),
                    critic_optimizer: OptimizerConfig::momentum(1e-3).with_clip(10.0),
                    mode: ScheduleMode::Adaptive,
                    critic_steps: 5,
                    lambda0: DEFAULT_LAMBDA0,
                    ratio_eps: DEFAULT_RATIO_EPS,
                    smoothing_window: 1,
                },
                selection_samples: 100,
            },
            value_head: ValueHeadSection {
                hidden_dims: vec![32],
                activation: Activation::Tanh,
                epochs: 200,
                batch_size: 8,
                optimizer: OptimizerConfig::adam(1e-4, 0.9, 0.999),
                samples: 4000,
                holdout_fraction: 0.2,
            },
            rlfinetune: RlConfig {
                epochs: 100,
                batch_size: 128,
                learning_rate: 1e-3,
                gamma: 1.0,
                returns_mode: ReturnsMode::ToGo,
                normalize_entropy: false,
                baseline: true,
                value_head_steps: 20,
                value_head_learning_rate: 3e-3,
            },
            evalmetrics: EvalSection { samples: 200, temperature: 1.0, greedy: false, model: ModelChoice::Auto, pca_csv: true },
            ablation: AblationSection {
                vae_epochs: 1,
                short_epochs: 40,
                long_epochs: 200,
                learning_rate: 0.1,
                eval_samples: 1000,
            },
        }
    }

    pub fn paper() -> Self {
        let leaky = Activation::LeakyRelu { slope: 0.2 };
        RunConfig {
            seed: 7,
            corpus: CorpusSection {
                train: None,
                dev: None,
                test: None,
                synthetic_sentences: 10_000,
                dev_fraction: 0.1,
                test_fraction: 0.1,
                min_count: 1,
            },
            seqvae: VaeConfig {
                embed_dim: 768,
                hidden_dim: 768,
                latent_dim: 768,
                max_len: MAX_SUPPORTED_LEN,
                epochs: 1,
                batch_size: 5,
                optimizer: OptimizerConfig::momentum(5e-5),
                beta_target: 0.0,
                annealing_ratio: 0.5,
                ratio_increase: 0.25,
            },
            latentgan: GanSection {
                architecture: GanArchitecture {
                    noise_dim: 768,
                    hidden_dim: 768,
                    blocks: 10,
                    activation: leaky,
                    gp_lambda: 10.0,
                },
                training: GanConfig {
                    epochs: 50,
                    batch_size: 256,
                    generator_optimizer: OptimizerConfig::momentum(1e-4),
                    critic_optimizer: OptimizerConfig::momentum(1e-4),
                    mode: ScheduleMode::Adaptive,
                    critic_steps: 5,
                    lambda0: DEFAULT_LAMBDA0,
                    ratio_eps: DEFAULT_RATIO_EPS,
                    smoothing_window: 1,
                },
                selection_samples: 500,
            },
            value_head: ValueHeadSection {
                hidden_dims: vec![768],
                activation: Activation::Tanh,
                epochs: 200,
                batch_size: 32,
                optimizer: OptimizerConfig::adam(1e-4, 0.9, 0.999),
                samples: 5000,
                holdout_fraction: 0.1,
            },
            rlfinetune: RlConfig {
                epochs: 1000,
                batch_size: 32,
                learning_rate: 1e-6,
                gamma: 1.0,
                returns_mode: ReturnsMode::PastInclusive,
                normalize_entropy: false,
                baseline: false,
                value_head_steps: 0,
                value_head_learning_rate: 1e-3,
            },
            evalmetrics: EvalSection { samples: 10_000, temperature: 1.0, greedy: false, model: ModelChoice::Auto, pca_csv: true },
            ablation: AblationSection {
                vae_epochs: 0,
                short_epochs: 1000,
                long_epochs: 5000,
                learning_rate: 1e-5,
                eval_samples: 10_000,
            },
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Profile defaults, overlaid with `path` (if any), then `seed`.
    pub fn load(path: Option<&Path>, profile: Profile, seed: Option<u64>) -> Result<Self, PipelineError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::overlay(profile, &text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::for_profile(profile),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Deep-merges `text` over the profile defaults.
    pub fn overlay(profile: Profile, text: &str) -> Result<Self, String> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| e.to_string())?;
        let mut merged = toml::Value::Table(base);
        merge(&mut merged, toml::Value::Table(overrides));
        merged.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    /// Parses a complete config with no profile defaults.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let c = &self.corpus;
        if c.train.is_none() && c.synthetic_sentences < 10 {
            return bad("corpus.synthetic_sentences must be at least 10 when no train file is given".into());
        }
        if !(0.0..1.0).contains(&c.dev_fraction) || !(0.0..1.0).contains(&c.test_fraction) {
            return bad("corpus dev/test fractions must lie in [0, 1)".into());
        }
        if c.dev_fraction + c.test_fraction >= 1.0 {
            return bad("corpus dev_fraction + test_fraction must be below 1".into());
        }
        if c.min_count == 0 {
            return bad("corpus.min_count must be at least 1".into());
        }
        let v = &self.seqvae;
        v.validate().or_else(|e| bad(format!("seqvae: {e}")))?;
        if v.embed_dim == 0 || v.hidden_dim == 0 || v.latent_dim == 0 {
            return bad("seqvae dims must be positive".into());
        }
        if !(3..=MAX_SUPPORTED_LEN).contains(&v.max_len) {
            return bad(format!("seqvae.max_len must lie in [3, {MAX_SUPPORTED_LEN}]"));
        }
        let g = &self.latentgan;
        let a = &g.architecture;
        if a.noise_dim == 0 || a.hidden_dim == 0 {
            return bad("latentgan.architecture dims must be positive".into());
        }
        if a.blocks == 0 {
            return bad("latentgan.architecture.blocks must be at least 1".into());
        }
        if !(a.gp_lambda >= 0.0) {
            return bad("latentgan.architecture.gp_lambda must be non-negative".into());
        }
        g.training.validate().or_else(|e| bad(format!("latentgan.training: {e}")))?;
        if g.selection_samples == 1 {
            return bad("latentgan.selection_samples must be 0 or at least 2".into());
        }
        let h = &self.value_head;
        h.head().validate().or_else(|e| bad(format!("value_head: {e}")))?;
        if h.hidden_dims.contains(&0) {
            return bad("value_head.hidden_dims entries must be positive".into());
        }
        if !(h.holdout_fraction > 0.0 && h.holdout_fraction < 1.0) {
            return bad("value_head.holdout_fraction must lie in (0, 1)".into());
        }
        let held = (h.samples as f64 * h.holdout_fraction).round() as usize;
        if held == 0 || held >= h.samples {
            return bad("value_head.samples too small for the holdout fraction".into());
        }
        self.rlfinetune.validate().or_else(|e| bad(format!("rlfinetune: {e}")))?;
        let e = &self.evalmetrics;
        if e.samples < 2 {
            return bad("evalmetrics.samples must be at least 2".into());
        }
        if !(e.temperature > 0.0 && e.temperature.is_finite()) {
            return bad("evalmetrics.temperature must be positive".into());
        }
        let ab = &self.ablation;
        if ab.short_epochs == 0 || ab.long_epochs < ab.short_epochs {
            return bad("ablation needs 1 <= short_epochs <= long_epochs".into());
        }
        if !(ab.learning_rate > 0.0 && ab.learning_rate.is_finite()) {
            return bad("ablation.learning_rate must be positive".into());
        }
        if ab.eval_samples < 2 {
            return bad("ablation.eval_samples must be at least 2".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // tagged enums are replaced whole so a new `kind` does not
                    // inherit fields of the old variant
                    Some(slot @ toml::Value::Table(_)) if !v.as_table().is_some_and(|t| t.contains_key("kind")) => {
                        merge(slot, v)
                    }
                    Some(slot) => *slot = v,
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
