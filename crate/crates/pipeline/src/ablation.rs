//! Finetuning-budget ablation: an under-trained VAE-GAN against the same
//! model after a short and a long RL run (1:5 budget ratio).

use std::path::Path;

use ltg_core::checkpoint::Checkpoint;
use ltg_core::corpus::{CorpusSplits, TokenSequence, Vocabulary};
use ltg_core::evalmetrics::{bbleu, bleu, distinct_n, BleuReference};
use ltg_core::latentgan::{generate_latents, GanPair};
use ltg_core::rlfinetune::RlEpoch;
use ltg_core::seqvae::SeqVae;
use ltg_core::util::{derive_seed, seeded};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, Meta};
use crate::config::RunConfig;
use crate::error::PipelineError;
use crate::ledger::{Ledger, Metrics, Stage};
use crate::stages::{
    decode_latents, finetune_with_snapshot, mean_reward, pretrain_vh_stage, rl_history_metrics, train_gan_stage,
    train_vae_stage, Experiment,
};

pub const REPORT_FILE: &str = "ablation.json";
pub const DIR: &str = "ablation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationColumn {
    pub name: String,
    pub rl_epochs: usize,
    /// Mean BLEU-1 reward against the training sentences.
    pub mean_reward: f64,
    pub bleu_2: f64,
    pub bbleu_2: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub columns: Vec<AblationColumn>,
    /// Per-epoch statistics of the long run (the short run is its prefix).
    pub trajectory: Vec<RlEpoch>,
}

impl AblationReport {
    pub fn column(&self, i: usize) -> &AblationColumn {
        &self.columns[i]
    }

    /// RL-short has a higher mean reward than the base model.
    pub fn quality_improves(&self) -> bool {
        self.columns[1].mean_reward > self.columns[0].mean_reward
    }

    /// RL-long is less diverse than RL-short on distinct-2 or BBLEU-2.
    pub fn diversity_drops(&self) -> bool {
        let (s, l) = (&self.columns[1], &self.columns[2]);
        l.distinct_2 < s.distinct_2 || l.bbleu_2 < s.bbleu_2
    }
}

pub struct AblationModels {
    pub base: SeqVae,
    pub short: SeqVae,
    pub long: SeqVae,
    pub gan: GanPair,
}

fn words(s: &[TokenSequence]) -> Vec<&[u32]> {
    s.iter().map(TokenSequence::words).collect()
}

/// Runs the whole ablation in memory.
pub fn ablation(
    vocab: &Vocabulary,
    splits: &CorpusSplits,
    cfg: &RunConfig,
    diverged_dir: &Path,
) -> Result<(AblationReport, AblationModels), PipelineError> {
    let a = &cfg.ablation;
    let meta = Meta {
        stage: Stage::AblationRl.name().into(),
        config_hash: cfg.hash(),
        vocab_hash: vocab.hash(),
        seed: cfg.seed,
    };
    let (vae, _, _) =
        train_vae_stage(splits, vocab, cfg, a.vae_epochs, &meta, &diverged_dir.join("vae.diverged.ltg"))?;
    let (gan, _, _, _, _) = train_gan_stage(&vae, splits, cfg, &meta, &diverged_dir.join("gan.diverged.ltg"))?;
    let (vh, _, _) = pretrain_vh_stage(&vae, &gan, splits, cfg)?;

    let train_words = words(&splits.train);
    let refs = BleuReference::new(&train_words);
    let mut rl = cfg.rlfinetune;
    rl.epochs = a.long_epochs;
    rl.learning_rate = a.learning_rate;
    let mut rng = seeded(derive_seed(cfg.seed, "ablation-rl"));
    let (short, long, trajectory) = finetune_with_snapshot(&vae, &vh, &gan, &refs, &rl, a.short_epochs, &mut rng)?;

    // every column decodes the same latents with the same sampling stream
    let eval_seed = derive_seed(cfg.seed, "ablation-eval");
    let z = generate_latents(&gan, a.eval_samples, &mut seeded(eval_seed))?;
    let test = if splits.test.is_empty() { &splits.dev } else { &splits.test };
    let test_words = words(test);
    let e = &cfg.evalmetrics;
    let mut columns = Vec::with_capacity(3);
    for (name, model, epochs) in [
        ("VAEGAN".to_string(), &vae, 0),
        (format!("RL {}", a.short_epochs), &short, a.short_epochs),
        (format!("RL {}", a.long_epochs), &long, a.long_epochs),
    ] {
        let sents = decode_latents(model, &z, e.greedy, e.temperature, &mut seeded(eval_seed ^ 1))?;
        let w = words(&sents);
        columns.push(AblationColumn {
            name,
            rl_epochs: epochs,
            mean_reward: mean_reward(&sents, &refs)?,
            bleu_2: bleu(&w, &test_words, 2),
            bbleu_2: bbleu(&test_words, &w, 2),
            distinct_1: distinct_n(&w, 1),
            distinct_2: distinct_n(&w, 2),
        });
    }
    let report = AblationReport { seed: cfg.seed, columns, trajectory };
    Ok((report, AblationModels { base: vae, short, long, gan }))
}

/// The `ablation-rl` stage: writes the report and the three decoders under
/// `DIR`.
pub(crate) fn run(x: &Experiment, ledger: &Ledger) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
    let corpus = ledger.require(Stage::Ingest, Stage::AblationRl)?;
    let (vocab, splits) = artifacts::load_corpus(&corpus)?;
    let dir = x.dir.join(DIR);
    std::fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))?;
    let (report, models) = ablation(&vocab, &splits, &x.config, &dir)?;
    let meta = Meta {
        stage: Stage::AblationRl.name().into(),
        config_hash: x.config.hash(),
        vocab_hash: vocab.hash(),
        seed: x.config.seed,
    };
    for (name, m) in [("base.ltg", &models.base), ("short.ltg", &models.short)] {
        let mut c = Checkpoint::new();
        c.put_json("meta", &meta);
        artifacts::put_vae(&mut c, m);
        artifacts::save(&c, &dir, name)?;
    }
    let mut c = Checkpoint::new();
    c.put_json("meta", &meta);
    artifacts::put_vae(&mut c, &models.long);
    c.put_json("rl.history", &report.trajectory);
    let hash = artifacts::save(&c, &dir, "long.ltg")?;
    let path = x.dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json + "\n").map_err(PipelineError::io(&path))?;

    for col in &report.columns {
        log::info!(
            "{:>10} | reward {:.4} | bleu-2 {:.4} | bbleu-2 {:.4} | distinct-2 {:.4}",
            col.name,
            col.mean_reward,
            col.bleu_2,
            col.bbleu_2,
            col.distinct_2
        );
    }
    let mut m = Metrics::new();
    for (key, col) in ["base", "short", "long"].iter().zip(&report.columns) {
        m.insert(format!("{key}_mean_reward"), col.mean_reward);
        m.insert(format!("{key}_bleu_2"), col.bleu_2);
        m.insert(format!("{key}_bbleu_2"), col.bbleu_2);
        m.insert(format!("{key}_distinct_2"), col.distinct_2);
    }
    m.insert("quality_improves".into(), f64::from(u8::from(report.quality_improves())));
    m.insert("diversity_drops".into(), f64::from(u8::from(report.diversity_drops())));
    Ok((format!("{DIR}/long.ltg"), hash, m, rl_history_metrics(&report.trajectory)))
}
