use std::path::PathBuf;

use ltg_core::checkpoint::CheckpointError;
use ltg_core::corpus::CorpusError;
use ltg_core::diffcore::DiffError;
use ltg_core::evalmetrics::MetricsError;
use ltg_core::latentgan::GanError;
use ltg_core::rlfinetune::RlError;
use ltg_core::seqvae::{TrainError, VaeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    /// A prior stage, input file or lock is missing or unusable.
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Dependency(_) | PipelineError::Io { .. } => 3,
            PipelineError::Numeric(_) => 4,
            PipelineError::Other(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| PipelineError::Io { path, source }
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        PipelineError::Dependency(format!("checkpoint: {e}"))
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } | CorpusError::MalformedVocab(_) => PipelineError::Dependency(e.to_string()),
            CorpusError::InvalidMinCount => PipelineError::Config(e.to_string()),
            _ => PipelineError::Other(format!("corpus: {e}")),
        }
    }
}

impl From<DiffError> for PipelineError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            DiffError::InvalidSpec(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Other(e.to_string()),
        }
    }
}

impl From<VaeError> for PipelineError {
    fn from(e: VaeError) -> Self {
        match e {
            VaeError::Diff(d) => d.into(),
            VaeError::InvalidTemperature(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Other(e.to_string()),
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => PipelineError::Numeric(e.to_string()),
            TrainError::Vae(v) => v.into(),
            TrainError::Config(c) => PipelineError::Config(c),
        }
    }
}

impl From<GanError> for PipelineError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::Diff(d) => d.into(),
            GanError::Config(c) => PipelineError::Config(c),
            GanError::Diverged { .. } => PipelineError::Numeric(e.to_string()),
            GanError::BatchMismatch(..) => PipelineError::Other(e.to_string()),
        }
    }
}

impl From<RlError> for PipelineError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::Diff(d) => d.into(),
            RlError::Vae(v) => v.into(),
            RlError::Gan(g) => g.into(),
            RlError::ValueHeadDiverged { .. } => PipelineError::Numeric(e.to_string()),
            RlError::Config(c) => PipelineError::Config(c),
            _ => PipelineError::Other(e.to_string()),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonFinite | MetricsError::NegativeEigenvalue(_) => PipelineError::Numeric(e.to_string()),
            _ => PipelineError::Other(format!("metrics: {e}")),
        }
    }
}
