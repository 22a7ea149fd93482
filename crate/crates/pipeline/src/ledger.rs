//! Append-only JSON-lines record of completed stages.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

pub const LEDGER_FILE: &str = "ledger.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    TrainVae,
    TrainGan,
    PretrainVh,
    FinetuneRl,
    Generate,
    Evaluate,
    AblationRl,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::TrainVae => "train-vae",
            Stage::TrainGan => "train-gan",
            Stage::PretrainVh => "pretrain-vh",
            Stage::FinetuneRl => "finetune-rl",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::AblationRl => "ablation-rl",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub stage: Stage,
    pub config_hash: String,
    /// Relative to the experiment directory.
    pub checkpoint: PathBuf,
    pub checkpoint_hash: String,
    pub wall_time_s: f64,
    pub metrics: Metrics,
    /// Per-epoch metrics, oldest first.
    #[serde(default)]
    pub history: Vec<Metrics>,
}

#[derive(Debug)]
pub struct Ledger {
    dir: PathBuf,
    records: Vec<StageRecord>,
}

impl Ledger {
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(LEDGER_FILE);
        let mut records = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: StageRecord = serde_json::from_str(line).map_err(|e| {
                    PipelineError::Dependency(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                records.push(rec);
            }
        }
        Ok(Self { dir: dir.to_path_buf(), records })
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    pub fn latest(&self, stage: Stage) -> Option<&StageRecord> {
        self.records.iter().rev().find(|r| r.stage == stage)
    }

    /// Latest record of `stage` whose checkpoint is still on disk, or an
    /// error telling the user which command to run.
    pub fn require(&self, stage: Stage, needed_by: Stage) -> Result<PathBuf, PipelineError> {
        let rec = self.latest(stage).ok_or_else(|| {
            PipelineError::Dependency(format!(
                "{needed_by} requires a completed {stage} stage in {}; run `ltg {stage} --out {}` first",
                self.dir.display(),
                self.dir.display()
            ))
        })?;
        let path = self.dir.join(&rec.checkpoint);
        if !path.exists() {
            return Err(PipelineError::Dependency(format!(
                "{needed_by} needs {}, recorded by {stage}, but it is missing; rerun `ltg {stage}`",
                path.display()
            )));
        }
        Ok(path)
    }

    /// Appends `rec`; its checkpoint must already exist.
    pub fn append(&mut self, rec: StageRecord) -> Result<(), PipelineError> {
        let ckpt = self.dir.join(&rec.checkpoint);
        if !ckpt.exists() {
            return Err(PipelineError::Other(format!("refusing to record missing checkpoint {}", ckpt.display())));
        }
        let path = self.dir.join(LEDGER_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(PipelineError::io(&path))?;
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(f, "{line}").and_then(|_| f.sync_data()).map_err(PipelineError::io(&path))?;
        self.records.push(rec);
        Ok(())
    }

    /// Metric history per stage, in the order the stages ran.
    pub fn replay(&self) -> Vec<(Stage, Metrics, Vec<Metrics>)> {
        self.records.iter().map(|r| (r.stage, r.metrics.clone(), r.history.clone())).collect()
    }
}
