//! The training stages. Each reads its inputs from earlier checkpoints in
//! the experiment directory, writes one checkpoint and appends one ledger
//! record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ltg_core::checkpoint::Checkpoint;
use ltg_core::corpus::{build_vocab, read_lines, split_lines, templated_grammar, CorpusSplits, TokenSequence, Vocabulary};
use ltg_core::diffcore::Matrix;
use ltg_core::evalmetrics::{bbleu, bleu, distinct_n, embed, pca_csv, BleuReference, MetricsReport, REPORT_ORDERS};
use ltg_core::latentgan::{generate_latents, train_gan, GanEpoch, GanPair};
use ltg_core::rlfinetune::{
    external_reward, finetune_rl, pretrain_value_head, value_residuals, RlEpoch, ValueHead,
    ValueSample,
};
use ltg_core::seqvae::{exact_reconstruction_rate, train_vae, DecodeMode, SeqVae, TrainError};
use ltg_core::util::{derive_seed, seeded, SeededRng};
use ltg_core::latentgan::GanError;

use crate::artifacts::{self, Meta, ScheduleAudit};
use crate::config::{ModelChoice, RunConfig};
use crate::error::PipelineError;
use crate::ledger::{Ledger, Metrics, Stage, StageRecord};
use crate::lock::ExperimentLock;

pub const SAMPLES_FILE: &str = "samples.txt";
pub const METRICS_FILE: &str = "metrics.json";
pub const PCA_FILE: &str = "pca.csv";
pub const RL_HISTORY_FILE: &str = "rl_history.jsonl";

/// Per-invocation options that are not part of the run config.
#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Sentences to generate (`generate`); defaults to `evalmetrics.samples`.
    pub count: Option<usize>,
    /// Decoder to sample from (`generate`, `evaluate`).
    pub model: Option<ModelChoice>,
    /// Output file for `generate`, relative to the experiment directory
    /// unless absolute.
    pub output: Option<PathBuf>,
}

pub struct Experiment {
    pub dir: PathBuf,
    pub config: RunConfig,
}

fn metrics<const N: usize>(pairs: [(&str, f64); N]) -> Metrics {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn words(seqs: &[TokenSequence]) -> Vec<&[u32]> {
    seqs.iter().map(TokenSequence::words).collect()
}

/// Decodes one sentence per latent row.
pub fn decode_latents(
    vae: &SeqVae,
    latents: &Matrix,
    greedy: bool,
    temperature: f64,
    rng: &mut SeededRng,
) -> Result<Vec<TokenSequence>, PipelineError> {
    let mode = if greedy { DecodeMode::Greedy } else { DecodeMode::Sample };
    Ok(vae.rollout_batch(latents, mode, temperature, rng)?.into_iter().map(|r| r.sequence).collect())
}

/// `count` sentences from the GAN → decoder path.
pub fn sample_sentences(
    vae: &SeqVae,
    gan: &GanPair,
    count: usize,
    greedy: bool,
    temperature: f64,
    rng: &mut SeededRng,
) -> Result<Vec<TokenSequence>, PipelineError> {
    if count == 0 {
        return Ok(vec![]);
    }
    let z = generate_latents(gan, count, rng)?;
    decode_latents(vae, &z, greedy, temperature, rng)
}

/// Mean BLEU-1 reward of `sentences` against `refs`.
pub fn mean_reward(sentences: &[TokenSequence], refs: &BleuReference<u32>) -> Result<f64, PipelineError> {
    let mut total = 0.0;
    for s in sentences {
        if !s.words().is_empty() {
            total += external_reward(s, refs)?;
        }
    }
    Ok(total / sentences.len().max(1) as f64)
}

fn rl_epoch_metrics(r: &RlEpoch) -> Metrics {
    metrics([
        ("epoch", r.epoch as f64),
        ("mean_external", r.mean_external),
        ("mean_entropy", r.mean_entropy),
        ("mean_intrinsic", r.mean_intrinsic),
        ("distinct_1", r.distinct_1),
        ("distinct_2", r.distinct_2),
        ("step_applied", if r.step_applied { 1.0 } else { 0.0 }),
    ])
}

/// Trains a VAE; on divergence the last finite parameters are written to
/// `diverged_path` before the error is returned.
pub fn train_vae_stage(
    splits: &CorpusSplits,
    vocab: &Vocabulary,
    cfg: &RunConfig,
    epochs: usize,
    meta: &Meta,
    diverged_path: &Path,
) -> Result<(SeqVae, Metrics, Vec<Metrics>), PipelineError> {
    let mut vcfg = cfg.seqvae.clone();
    vcfg.epochs = epochs;
    let mut rng = seeded(derive_seed(cfg.seed, "train-vae"));
    let (vae, history) = match train_vae(splits, vocab.len(), &vcfg, derive_seed(cfg.seed, "vae-init"), &mut rng) {
        Ok(v) => v,
        Err(TrainError::Diverged { step, last_good, .. }) => {
            let mut c = Checkpoint::new();
            c.put_json("meta", meta);
            artifacts::put_vae(&mut c, &last_good);
            let _ = c.save(diverged_path);
            return Err(PipelineError::Numeric(format!(
                "vae training diverged at step {step}; last finite parameters saved to {}",
                diverged_path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let hist: Vec<Metrics> = history
        .epochs
        .iter()
        .map(|e| {
            let mut m = metrics([
                ("epoch", e.epoch as f64),
                ("beta", e.beta),
                ("mean_loss", e.mean_loss),
                ("mean_nll", e.mean_nll),
                ("mean_kl", e.mean_kl),
            ]);
            if let (Some(a), Some(n)) = (e.dev_token_accuracy, e.dev_nll) {
                m.insert("dev_token_accuracy".into(), a);
                m.insert("dev_nll".into(), n);
            }
            m
        })
        .collect();
    let mut m = hist.last().cloned().unwrap_or_default();
    m.remove("epoch");
    m.insert("train_exact_reconstruction".into(), exact_reconstruction_rate(&vae, &splits.train));
    Ok((vae, m, hist))
}

/// Encoder posterior means of the training sentences: the GAN's real data.
pub fn real_latents(vae: &SeqVae, splits: &CorpusSplits) -> Matrix {
    let rows: Vec<Vec<f64>> = vae.encode_batch(&splits.train).into_iter().map(|p| p.mu).collect();
    Matrix::from_rows(&rows)
}

pub fn train_gan_stage(
    vae: &SeqVae,
    splits: &CorpusSplits,
    cfg: &RunConfig,
    meta: &Meta,
    diverged_path: &Path,
) -> Result<(GanPair, ScheduleAudit, Vec<GanEpoch>, Metrics, Vec<Metrics>), PipelineError> {
    let g = &cfg.latentgan;
    let real = real_latents(vae, splits);
    let pair = GanPair::new(&g.architecture, vae.spec().latent_dim, derive_seed(cfg.seed, "gan-init"))?;
    let mut rng = seeded(derive_seed(cfg.seed, "train-gan"));
    let refs_pool = if splits.dev.len() >= 2 { &splits.dev } else { &splits.train };
    let n_sel = g.selection_samples.min(refs_pool.len());
    let sel_refs: Vec<&[u32]> = words(&refs_pool[..n_sel]);
    let sel_seed = derive_seed(cfg.seed, "gan-select");
    let order = REPORT_ORDERS[0];
    let mut selector = |p: &GanPair| -> f64 {
        // same noise and sampling stream for every epoch keeps scores comparable
        let mut r = seeded(sel_seed);
        match sample_sentences(vae, p, n_sel, cfg.evalmetrics.greedy, cfg.evalmetrics.temperature, &mut r) {
            Ok(s) => {
                let h = words(&s);
                bleu(&h, &sel_refs, order) + bbleu(&sel_refs, &h, order)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let sel: Option<&mut ltg_core::latentgan::Selector<'_>> = if n_sel >= 2 { Some(&mut selector) } else { None };
    let (pair, history) = match train_gan(pair, &real, &g.training, &mut rng, sel) {
        Ok(v) => v,
        Err(GanError::Diverged { what, step, best, history }) => {
            let audit = ScheduleAudit {
                mode: g.training.mode,
                generator_updates: history.generator_updates,
                critic_updates: history.critic_updates,
                best_epoch: history.best_epoch,
                gp_lambda: g.architecture.gp_lambda,
            };
            let mut c = Checkpoint::new();
            c.put_json("meta", meta);
            artifacts::put_gan(&mut c, &best, &audit, &history.epochs);
            let _ = c.save(diverged_path);
            return Err(PipelineError::Numeric(format!(
                "gan training produced a non-finite {what} loss at step {step}; best snapshot saved to {}",
                diverged_path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let audit = ScheduleAudit {
        mode: g.training.mode,
        generator_updates: history.generator_updates,
        critic_updates: history.critic_updates,
        best_epoch: history.best_epoch,
        gp_lambda: g.architecture.gp_lambda,
    };
    let hist: Vec<Metrics> = history
        .epochs
        .iter()
        .map(|e| {
            let mut m = metrics([
                ("epoch", e.epoch as f64),
                ("lambda_adaptive", e.lambda_adaptive),
                ("mean_wasserstein", e.mean_wasserstein),
                ("generator_updates", e.generator_updates as f64),
                ("critic_updates", e.critic_updates as f64),
            ]);
            if let Some(s) = e.score {
                m.insert("selection_score".into(), s);
            }
            m
        })
        .collect();
    let mut m = metrics([
        ("generator_updates", history.generator_updates as f64),
        ("critic_updates", history.critic_updates as f64),
        ("final_wasserstein", history.epochs.last().map_or(0.0, |e| e.mean_wasserstein)),
    ]);
    if let Some(b) = history.best_epoch {
        m.insert("best_epoch".into(), b as f64);
    }
    Ok((pair, audit, history.epochs, m, hist))
}

/// Value-head training samples: generated sentences with their hidden
/// states and BLEU-1 rewards against `refs`.
pub fn value_samples(
    vae: &SeqVae,
    gan: &GanPair,
    refs: &BleuReference<u32>,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<ValueSample>, PipelineError> {
    let z = generate_latents(gan, count, rng)?;
    let rollouts = vae.rollout_batch(&z, DecodeMode::Sample, 1.0, rng)?;
    let mut out = Vec::with_capacity(count);
    for r in rollouts {
        let reward = if r.sequence.words().is_empty() { 0.0 } else { external_reward(&r.sequence, refs)? };
        out.push(ValueSample { states: Matrix::from_rows(&r.value_states), reward });
    }
    Ok(out)
}

fn mae(vh: &ValueHead, s: &[ValueSample]) -> Result<f64, PipelineError> {
    let r = value_residuals(vh, s)?;
    Ok(r.iter().map(|x| x.abs()).sum::<f64>() / r.len().max(1) as f64)
}

pub fn pretrain_vh_stage(
    vae: &SeqVae,
    gan: &GanPair,
    splits: &CorpusSplits,
    cfg: &RunConfig,
) -> Result<(ValueHead, Metrics, Vec<Metrics>), PipelineError> {
    let h = &cfg.value_head;
    let refs = BleuReference::new(&words(&splits.train));
    let mut rng = seeded(derive_seed(cfg.seed, "pretrain-vh"));
    let samples = value_samples(vae, gan, &refs, h.samples, &mut rng)?;
    let held = (h.samples as f64 * h.holdout_fraction).round() as usize;
    let (train, test) = samples.split_at(samples.len() - held);
    let head = h.head();
    let vh = ValueHead::new(vae.spec().hidden_dim, &head, derive_seed(cfg.seed, "vh-init"))?;
    let before = mae(&vh, test)?;
    let (vh, history) = pretrain_value_head(vh, train, &head, &mut rng)?;
    let m = metrics([
        ("train_mae", mae(&vh, train)?),
        ("heldout_mae", mae(&vh, test)?),
        ("heldout_mae_before", before),
        ("mean_reward", samples.iter().map(|s| s.reward).sum::<f64>() / samples.len() as f64),
    ]);
    let hist = history.epoch_mae.iter().enumerate().map(|(e, v)| metrics([("epoch", e as f64), ("mae", *v)])).collect();
    Ok((vh, m, hist))
}

/// Reads (or synthesizes) the corpus, builds the vocabulary on the training
/// lines and encodes all three splits.
pub fn build_corpus(cfg: &RunConfig) -> Result<(Vocabulary, CorpusSplits), PipelineError> {
    let c = &cfg.corpus;
    let mut rng = seeded(derive_seed(cfg.seed, "ingest"));
    let read = |p: &Path| -> Result<Vec<String>, PipelineError> {
        if !p.exists() {
            return Err(PipelineError::Dependency(format!("corpus file {} not found", p.display())));
        }
        Ok(read_lines(p)?)
    };
    let (provenance, lines) = match &c.train {
        Some(p) => (p.display().to_string(), read(p)?),
        None => (
            format!("templated-grammar n={} seed={}", c.synthetic_sentences, cfg.seed),
            templated_grammar(c.synthetic_sentences, &mut rng),
        ),
    };
    let (train, dev, test) = match (&c.dev, &c.test) {
        (Some(d), Some(t)) => (lines, read(d)?, read(t)?),
        _ => split_lines(&lines, c.dev_fraction, c.test_fraction, &mut rng),
    };
    let vocab = build_vocab(&train, c.min_count)?;
    let splits = CorpusSplits::encode(&vocab, &train, &dev, &test, cfg.seqvae.max_len, provenance)?;
    Ok((vocab, splits))
}

impl Experiment {
    pub fn new(dir: impl Into<PathBuf>, config: RunConfig) -> Result<Self, PipelineError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))?;
        config.validate()?;
        Ok(Self { dir, config })
    }

    fn meta(&self, stage: Stage, vocab: &Vocabulary) -> Meta {
        Meta {
            stage: stage.name().into(),
            config_hash: self.config.hash(),
            vocab_hash: vocab.hash(),
            seed: self.config.seed,
        }
    }

    fn corpus(&self, ledger: &Ledger, stage: Stage) -> Result<(Vocabulary, CorpusSplits), PipelineError> {
        artifacts::load_corpus(&ledger.require(Stage::Ingest, stage)?)
    }

    /// Runs `stage` under the directory lock and records it in the ledger.
    pub fn run(&self, stage: Stage, opts: &StageOptions) -> Result<StageRecord, PipelineError> {
        let _lock = ExperimentLock::acquire(&self.dir, stage.name())?;
        let mut ledger = Ledger::open(&self.dir)?;
        let t0 = Instant::now();
        let (checkpoint, checkpoint_hash, metrics, history) = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::TrainVae => self.train_vae(&ledger)?,
            Stage::TrainGan => self.train_gan(&ledger)?,
            Stage::PretrainVh => self.pretrain_vh(&ledger)?,
            Stage::FinetuneRl => self.finetune_rl(&ledger)?,
            Stage::Generate => self.generate(&ledger, opts)?,
            Stage::Evaluate => self.evaluate(&ledger, opts)?,
            Stage::AblationRl => crate::ablation::run(self, &ledger)?,
        };
        let rec = StageRecord {
            stage,
            config_hash: self.config.hash(),
            checkpoint: PathBuf::from(checkpoint),
            checkpoint_hash,
            wall_time_s: t0.elapsed().as_secs_f64(),
            metrics,
            history,
        };
        ledger.append(rec.clone())?;
        Ok(rec)
    }

    /// Ingest through evaluate, in order.
    pub fn run_all(&self) -> Result<Vec<StageRecord>, PipelineError> {
        [Stage::Ingest, Stage::TrainVae, Stage::TrainGan, Stage::PretrainVh, Stage::FinetuneRl, Stage::Evaluate]
            .into_iter()
            .map(|s| self.run(s, &StageOptions::default()))
            .collect()
    }

    pub fn load_corpus(&self) -> Result<(Vocabulary, CorpusSplits), PipelineError> {
        self.corpus(&Ledger::open(&self.dir)?, Stage::Generate)
    }

    fn ingest(&self) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
        let (vocab, splits) = build_corpus(&self.config)?;
        let vocab_path = self.dir.join(artifacts::VOCAB);
        vocab.save(&vocab_path)?;
        let ck = artifacts::corpus_checkpoint(&self.meta(Stage::Ingest, &vocab), &vocab, &splits);
        let hash = artifacts::save(&ck, &self.dir, artifacts::CORPUS)?;
        let [tr, dv, te] = splits.stats();
        log::info!("ingest: vocab {} | train {tr} | dev {dv} | test {te}", vocab.len());
        let m = metrics([
            ("vocab_size", vocab.len() as f64),
            ("train_sentences", tr.count as f64),
            ("dev_sentences", dv.count as f64),
            ("test_sentences", te.count as f64),
            ("train_mean_length", tr.mean_length),
            ("test_mean_length", te.mean_length),
        ]);
        Ok((artifacts::CORPUS.into(), hash, m, vec![]))
    }

    fn train_vae(&self, ledger: &Ledger) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
        let (vocab, splits) = self.corpus(ledger, Stage::TrainVae)?;
        let meta = self.meta(Stage::TrainVae, &vocab);
        let (vae, m, hist) = train_vae_stage(
            &splits,
            &vocab,
            &self.config,
            self.config.seqvae.epochs,
            &meta,
            &self.dir.join("vae.diverged.ltg"),
        )?;
        let mut c = Checkpoint::new();
        c.put_json("meta", &meta);
        artifacts::put_vae(&mut c, &vae);
        let hash = artifacts::save(&c, &self.dir, artifacts::VAE)?;
        Ok((artifacts::VAE.into(), hash, m, hist))
    }

    fn train_gan(&self, ledger: &Ledger) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
        let vae_path = ledger.require(Stage::TrainVae, Stage::TrainGan)?;
        let (vocab, splits) = self.corpus(ledger, Stage::TrainGan)?;
        let vae = artifacts::load_vae(&vae_path, &vocab)?;
        let meta = self.meta(Stage::TrainGan, &vocab);
        let (pair, audit, epochs, m, hist) =
            train_gan_stage(&vae, &splits, &self.config, &meta, &self.dir.join("gan.diverged.ltg"))?;
        let mut c = Checkpoint::new();
        c.put_json("meta", &meta);
        artifacts::put_gan(&mut c, &pair, &audit, &epochs);
        let hash = artifacts::save(&c, &self.dir, artifacts::GAN)?;
        Ok((artifacts::GAN.into(), hash, m, hist))
    }

    fn pretrain_vh(&self, ledger: &Ledger) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
        let gan_path = ledger.require(Stage::TrainGan, Stage::PretrainVh)?;
        let vae_path = ledger.require(Stage::TrainVae, Stage::PretrainVh)?;
        let (vocab, splits) = self.corpus(ledger, Stage::PretrainVh)?;
        let vae = artifacts::load_vae(&vae_path, &vocab)?;
        let (gan, _) = artifacts::load_gan(&gan_path, &vocab)?;
        let (vh, m, hist) = pretrain_vh_stage(&vae, &gan, &splits, &self.config)?;
        let mut c = Checkpoint::new();
        c.put_json("meta", &self.meta(Stage::PretrainVh, &vocab));
        artifacts::put_value_head(&mut c, &vh);
        let hash = artifacts::save(&c, &self.dir, artifacts::VALUE_HEAD)?;
        Ok((artifacts::VALUE_HEAD.into(), hash, m, hist))
    }

    fn finetune_rl(&self, ledger: &Ledger) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
        let vh_path = ledger.require(Stage::PretrainVh, Stage::FinetuneRl)?;
        let gan_path = ledger.require(Stage::TrainGan, Stage::FinetuneRl)?;
        let vae_path = ledger.require(Stage::TrainVae, Stage::FinetuneRl)?;
        let (vocab, splits) = self.corpus(ledger, Stage::FinetuneRl)?;
        let vae = artifacts::load_vae(&vae_path, &vocab)?;
        let (gan, _) = artifacts::load_gan(&gan_path, &vocab)?;
        let vh = artifacts::load_value_head(&vh_path, &vocab)?;
        let refs = BleuReference::new(&words(&splits.train));
        let mut rng = seeded(derive_seed(self.config.seed, "finetune-rl"));
        let hist_path = self.dir.join(RL_HISTORY_FILE);
        let mut out = BufWriter::new(File::create(&hist_path).map_err(PipelineError::io(&hist_path))?);
        let mut write_err = None;
        let (tuned, history) = finetune_rl(&vae, &vh, &gan, &refs, &self.config.rlfinetune, &mut rng, |rec, _| {
            if write_err.is_none() {
                if let Err(e) = writeln!(out, "{}", serde_json::to_string(rec).expect("epoch serializes")) {
                    write_err = Some(e);
                }
            }
        })?;
        if let Some(e) = write_err {
            return Err(PipelineError::io(&hist_path)(e));
        }
        out.flush().map_err(PipelineError::io(&hist_path))?;
        let mut c = Checkpoint::new();
        c.put_json("meta", &self.meta(Stage::FinetuneRl, &vocab));
        artifacts::put_vae(&mut c, &tuned);
        c.put_json("rl.history", &history);
        let hash = artifacts::save(&c, &self.dir, artifacts::RL)?;
        let hist: Vec<Metrics> = history.iter().map(rl_epoch_metrics).collect();
        let mut m = Metrics::new();
        if let (Some(first), Some(last)) = (history.first(), history.last()) {
            m.insert("initial_mean_external".into(), first.mean_external);
            m.insert("final_mean_external".into(), last.mean_external);
            m.insert("final_mean_intrinsic".into(), last.mean_intrinsic);
            m.insert("final_distinct_2".into(), last.distinct_2);
        }
        m.insert("frozen_unchanged".into(), if tuned.frozen_hash() == vae.frozen_hash() { 1.0 } else { 0.0 });
        Ok((artifacts::RL.into(), hash, m, hist))
    }

    /// Decoder checkpoint selected by `choice`.
    fn model_path(&self, ledger: &Ledger, choice: ModelChoice, stage: Stage) -> Result<PathBuf, PipelineError> {
        match choice {
            ModelChoice::Base => ledger.require(Stage::TrainVae, stage),
            ModelChoice::Rl => ledger.require(Stage::FinetuneRl, stage),
            ModelChoice::Auto => match ledger.latest(Stage::FinetuneRl) {
                Some(_) => ledger.require(Stage::FinetuneRl, stage),
                None => ledger.require(Stage::TrainVae, stage),
            },
        }
    }

    /// Samples `count` sentences from the chosen decoder; returns the
    /// decoder checkpoint's path relative to the experiment dir.
    fn sample_for(
        &self,
        ledger: &Ledger,
        stage: Stage,
        choice: ModelChoice,
        count: usize,
    ) -> Result<(Vocabulary, CorpusSplits, SeqVae, Vec<TokenSequence>, String), PipelineError> {
        let gan_path = ledger.require(Stage::TrainGan, stage)?;
        let model_path = self.model_path(ledger, choice, stage)?;
        let (vocab, splits) = self.corpus(ledger, stage)?;
        let vae = artifacts::load_vae(&model_path, &vocab)?;
        let (gan, _) = artifacts::load_gan(&gan_path, &vocab)?;
        let e = &self.config.evalmetrics;
        let mut rng = seeded(derive_seed(self.config.seed, "generate"));
        let sents = sample_sentences(&vae, &gan, count, e.greedy, e.temperature, &mut rng)?;
        let rel = model_path.strip_prefix(&self.dir).unwrap_or(&model_path).display().to_string();
        Ok((vocab, splits, vae, sents, rel))
    }

    fn generate(&self, ledger: &Ledger, opts: &StageOptions) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
        let count = opts.count.unwrap_or(self.config.evalmetrics.samples);
        let choice = opts.model.unwrap_or(self.config.evalmetrics.model);
        let (vocab, _, _, sents, model) = self.sample_for(ledger, Stage::Generate, choice, count)?;
        let out_path = match &opts.output {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.dir.join(p),
            None => self.dir.join(SAMPLES_FILE),
        };
        let mut text = String::new();
        for s in &sents {
            text.push_str(&vocab.decode(s)?);
            text.push('\n');
        }
        std::fs::write(&out_path, text).map_err(PipelineError::io(&out_path))?;
        let w = words(&sents);
        let mut m = metrics([("count", count as f64)]);
        if !sents.is_empty() {
            m.insert("distinct_1".into(), distinct_n(&w, 1));
            m.insert("distinct_2".into(), distinct_n(&w, 2));
            m.insert("mean_length".into(), w.iter().map(|s| s.len()).sum::<usize>() as f64 / w.len() as f64);
        }
        let hash = artifacts::file_hash(&self.dir.join(&model))?;
        Ok((model, hash, m, vec![]))
    }

    fn evaluate(&self, ledger: &Ledger, opts: &StageOptions) -> Result<(String, String, Metrics, Vec<Metrics>), PipelineError> {
        let e = &self.config.evalmetrics;
        let choice = opts.model.unwrap_or(e.model);
        let (_, splits, vae, sents, model) = self.sample_for(ledger, Stage::Evaluate, choice, e.samples)?;
        let test = if splits.test.len() >= 2 { &splits.test } else { &splits.dev };
        if test.len() < 2 {
            return Err(PipelineError::Dependency("evaluation needs at least 2 test (or dev) sentences".into()));
        }
        let eval = MetricsReport::compute(&sents, test, &embed(&sents, &vae), &embed(test, &vae), e.pca_csv)?;
        let path = self.dir.join(METRICS_FILE);
        let json = serde_json::to_string_pretty(&eval.report).expect("report serializes");
        std::fs::write(&path, json + "\n").map_err(PipelineError::io(&path))?;
        if let (Some(t), Some(g)) = (&eval.pca_test, &eval.pca_generated) {
            let p = self.dir.join(PCA_FILE);
            std::fs::write(&p, pca_csv(&[("test", t), ("generated", g)])).map_err(PipelineError::io(&p))?;
        }
        let r = &eval.report;
        let mut m = BTreeMap::new();
        for (i, n) in r.orders.iter().enumerate() {
            m.insert(format!("bleu_{n}"), r.bleu[i]);
            m.insert(format!("bbleu_{n}"), r.bbleu[i]);
        }
        m.insert("fid".into(), r.fid);
        m.insert("distinct_1".into(), r.distinct[0]);
        m.insert("distinct_2".into(), r.distinct[1]);
        let hash = artifacts::file_hash(&self.dir.join(&model))?;
        Ok((model, hash, m, vec![]))
    }
}

/// Distinct-2 and BBLEU-2 of `sents` against `test`, used by the ablation
/// report.
pub fn diversity(sents: &[TokenSequence], test: &[TokenSequence]) -> (f64, f64) {
    let w = words(sents);
    (distinct_n(&w, 2), bbleu(&words(test), &w, 2))
}

pub fn quality(sents: &[TokenSequence], test: &[TokenSequence]) -> f64 {
    bleu(&words(sents), &words(test), 2)
}

pub fn rl_history_metrics(h: &[RlEpoch]) -> Vec<Metrics> {
    h.iter().map(rl_epoch_metrics).collect()
}

/// One finetuning run of the long budget; the policy after `snapshot_epoch`
/// epochs is captured on the way. Identical to running a separate
/// same-seed copy for the short budget.
pub fn finetune_with_snapshot(
    vae: &SeqVae,
    vh: &ValueHead,
    gan: &GanPair,
    refs: &BleuReference<u32>,
    cfg: &ltg_core::rlfinetune::RlConfig,
    snapshot_epoch: usize,
    rng: &mut SeededRng,
) -> Result<(SeqVae, SeqVae, Vec<RlEpoch>), PipelineError> {
    let mut snap = None;
    let (long, hist) = finetune_rl(vae, vh, gan, refs, cfg, rng, |rec, m| {
        if rec.epoch + 1 == snapshot_epoch {
            snap = Some(m.clone());
        }
    })?;
    let short = match snap {
        Some(s) => s,
        None if snapshot_epoch == 0 => vae.clone(),
        None => long.clone(),
    };
    Ok((short, long, hist))
}
