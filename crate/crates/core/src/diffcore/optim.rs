//! First-order optimizers over [`ParamStore`]s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::network::GradientReport;
use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Momentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Momentum coefficient, or Adam's first-moment decay.
    pub momentum: f64,
    /// Adam's second-moment decay; ignored by momentum SGD.
    pub beta2: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl OptimizerConfig {
    pub fn momentum(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Momentum, learning_rate, momentum: 0.9, beta2: 0.999, clip_norm: 0.0 }
    }

    pub fn adam(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate, momentum: beta1, beta2, clip_norm: 0.0 }
    }

    pub fn with_clip(mut self, clip_norm: f64) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return Err("momentum and beta2 must lie in [0, 1)".into());
        }
        if self.clip_norm < 0.0 {
            return Err("clip_norm must be non-negative".into());
        }
        Ok(())
    }
}

/// Minimizing optimizer. Call [`Optimizer::step`] with a loss gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, first: BTreeMap::new(), second: BTreeMap::new(), steps: 0 }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one descent step. Entries of `grads` absent from `params` are
    /// ignored; parameters absent from `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradientReport) {
        self.steps += 1;
        let cfg = self.config;
        let clip = if cfg.clip_norm > 0.0 {
            let n = grads.norm();
            if n > cfg.clip_norm {
                cfg.clip_norm / n
            } else {
                1.0
            }
        } else {
            1.0
        };
        for (name, grad) in &grads.params {
            let Some(param) = params.get_mut(name) else { continue };
            let (r, c) = grad.shape();
            match cfg.kind {
                OptimizerKind::Momentum => {
                    let vel = self.first.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
                    for ((v, g), p) in vel.data_mut().iter_mut().zip(grad.data()).zip(param.data_mut()) {
                        *v = cfg.momentum * *v + clip * g;
                        *p -= cfg.learning_rate * *v;
                    }
                }
                OptimizerKind::Adam => {
                    let t = self.steps as i32;
                    let bc1 = 1.0 - cfg.momentum.powi(t);
                    let bc2 = 1.0 - cfg.beta2.powi(t);
                    let m = self.first.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
                    let v = self.second.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
                    for (((mi, vi), g), p) in
                        m.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(grad.data()).zip(param.data_mut())
                    {
                        let g = clip * g;
                        *mi = cfg.momentum * *mi + (1.0 - cfg.momentum) * g;
                        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                        *p -= cfg.learning_rate * (*mi / bc1) / ((*vi / bc2).sqrt() + 1e-8);
                    }
                }
            }
        }
    }
}
