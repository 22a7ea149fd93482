//! Stage orchestration for the `ltg` command: config profiles, the
//! experiment ledger, checkpoint layouts and the ablation scenario.

pub mod ablation;
pub mod artifacts;
pub mod config;
pub mod error;
pub mod ledger;
pub mod lock;
pub mod stages;

pub use config::{Profile, RunConfig};
pub use error::PipelineError;
pub use ledger::{Ledger, Stage, StageRecord};
pub use stages::{Experiment, StageOptions};
