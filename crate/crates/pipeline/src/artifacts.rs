//! Checkpoint layouts for each stage's output.

use std::path::Path;

use ltg_core::checkpoint::Checkpoint;
use ltg_core::corpus::{CorpusSplits, Vocabulary};
use ltg_core::diffcore::NetworkSpec;
use ltg_core::latentgan::{GanEpoch, GanPair, ScheduleMode};
use ltg_core::rlfinetune::ValueHead;
use ltg_core::seqvae::{SeqVae, SeqVaeSpec};
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

pub const CORPUS: &str = "corpus.ltg";
pub const VAE: &str = "vae.ltg";
pub const GAN: &str = "gan.ltg";
pub const VALUE_HEAD: &str = "vh.ltg";
pub const RL: &str = "rl.ltg";
pub const VOCAB: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub stage: String,
    pub config_hash: String,
    pub vocab_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleAudit {
    pub mode: ScheduleMode,
    pub generator_updates: usize,
    pub critic_updates: usize,
    pub best_epoch: Option<usize>,
    pub gp_lambda: f64,
}

fn known(prefixes: &'static [&'static str]) -> impl Fn(&str) -> bool {
    move |name| name == "meta" || prefixes.iter().any(|p| name.starts_with(p))
}

pub fn meta(c: &Checkpoint) -> Result<Meta, PipelineError> {
    Ok(c.json("meta")?)
}

pub fn check_vocab(c: &Checkpoint, vocab: &Vocabulary, path: &Path) -> Result<(), PipelineError> {
    let m = meta(c)?;
    if m.vocab_hash != vocab.hash() {
        return Err(PipelineError::Dependency(format!(
            "{} was built with a different vocabulary; rerun the stages after ingest",
            path.display()
        )));
    }
    Ok(())
}

pub fn corpus_checkpoint(meta: &Meta, vocab: &Vocabulary, splits: &CorpusSplits) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.put_json("meta", meta);
    c.put("corpus.vocab", vocab.to_text().into_bytes());
    c.put_json("corpus.splits", splits);
    c
}

pub fn load_corpus(path: &Path) -> Result<(Vocabulary, CorpusSplits), PipelineError> {
    let c = Checkpoint::load(path, known(&["corpus."]))?;
    let text = String::from_utf8(c.get("corpus.vocab")?.to_vec())
        .map_err(|_| PipelineError::Dependency(format!("{}: vocabulary is not utf-8", path.display())))?;
    let vocab = Vocabulary::from_text(&text)?;
    let splits: CorpusSplits = c.json("corpus.splits")?;
    Ok((vocab, splits))
}

pub fn put_vae(c: &mut Checkpoint, vae: &SeqVae) {
    c.put_json("vae.spec", vae.spec());
    c.put_params("vae.params", vae.params());
}

pub fn load_vae(path: &Path, vocab: &Vocabulary) -> Result<SeqVae, PipelineError> {
    let c = Checkpoint::load(path, known(&["vae.", "rl."]))?;
    check_vocab(&c, vocab, path)?;
    let spec: SeqVaeSpec = c.json("vae.spec")?;
    Ok(SeqVae::from_parts(spec, c.params("vae.params")?)?)
}

pub fn put_gan(c: &mut Checkpoint, g: &GanPair, audit: &ScheduleAudit, epochs: &[GanEpoch]) {
    c.put_json("gan.generator.spec", &g.generator);
    c.put_params("gan.generator.params", &g.generator_params);
    c.put_json("gan.critic.spec", &g.critic);
    c.put_params("gan.critic.params", &g.critic_params);
    c.put_json("gan.schedule", audit);
    c.put_json("gan.history", &epochs);
}

pub fn load_gan(path: &Path, vocab: &Vocabulary) -> Result<(GanPair, ScheduleAudit), PipelineError> {
    let c = Checkpoint::load(path, known(&["gan."]))?;
    check_vocab(&c, vocab, path)?;
    let audit: ScheduleAudit = c.json("gan.schedule")?;
    let g: NetworkSpec = c.json("gan.generator.spec")?;
    let d: NetworkSpec = c.json("gan.critic.spec")?;
    let pair = GanPair::from_parts(g, c.params("gan.generator.params")?, d, c.params("gan.critic.params")?, audit.gp_lambda)?;
    Ok((pair, audit))
}

pub fn put_value_head(c: &mut Checkpoint, vh: &ValueHead) {
    c.put_json("vh.spec", &vh.spec);
    c.put_params("vh.params", &vh.params);
}

pub fn load_value_head(path: &Path, vocab: &Vocabulary) -> Result<ValueHead, PipelineError> {
    let c = Checkpoint::load(path, known(&["vh."]))?;
    check_vocab(&c, vocab, path)?;
    let spec: NetworkSpec = c.json("vh.spec")?;
    ValueHead::from_parts(spec, c.params("vh.params")?).map_err(PipelineError::from)
}

/// Writes `c` to `dir/name` and returns its hash.
pub fn save(c: &Checkpoint, dir: &Path, name: &str) -> Result<String, PipelineError> {
    let path = dir.join(name);
    c.save(&path).map_err(|e| PipelineError::Other(format!("writing {}: {e}", path.display())))?;
    Ok(c.hash())
}

pub fn file_hash(path: &Path) -> Result<String, PipelineError> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(PipelineError::io(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
