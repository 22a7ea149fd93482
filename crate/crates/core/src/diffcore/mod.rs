//! Differentiable-computation substrate.
//!
//! A small eager tape ([`Graph`]) over dense `f64` matrices, fixed-topology
//! feedforward stacks ([`NetworkSpec`]) and the optimizers used by every
//! training stage.

mod graph;
mod matrix;
mod network;
mod optim;
mod params;

use thiserror::Error;

pub use graph::{Graph, Var};
pub use matrix::{softmax, Matrix};
pub use network::{
    build_gradient_penalty, forward, grad_input, grad_params, grad_penalty_params, Activation, GradientReport,
    NetworkSpec, NORM_STABILIZER,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{Initializer, ParamStore};

pub(crate) use params::hex_digest;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch at layer `{layer}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch { layer: String, expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite value produced at layer `{layer}`")]
    NonFinite { layer: String },
    #[error("network output has width {0}; a scalar-output critic is required")]
    NonScalarOutput(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
}
