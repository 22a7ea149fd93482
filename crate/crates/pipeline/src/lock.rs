use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::PipelineError;

pub const LOCK_FILE: &str = ".ltg.lock";

/// Exclusive claim on an experiment directory, released on drop.
#[derive(Debug)]
pub struct ExperimentLock {
    path: PathBuf,
}

impl ExperimentLock {
    pub fn acquire(dir: &Path, stage: &str) -> Result<Self, PipelineError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "pid={} stage={stage}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(PipelineError::Dependency(format!(
                    "{} is locked by another stage ({}); remove {} if that process is gone",
                    dir.display(),
                    holder.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(PipelineError::io(&path)(e)),
        }
    }
}

impl Drop for ExperimentLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
