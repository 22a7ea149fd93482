//! Fixed-topology feedforward stacks and their gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::params::{Initializer, ParamStore};
use super::DiffError;

/// Added under the square root of the input-gradient norm in the penalty.
pub const NORM_STABILIZER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.leaky_relu(x, 0.0),
            Activation::LeakyRelu { slope } => g.leaky_relu(x, slope),
        }
    }
}

/// Input affine layers down `hidden_dims`, then `blocks` residual blocks
/// `h + act(h W + b)` at the last hidden width, then a linear output layer.
///
/// With no hidden dims and no blocks the network is a single affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub blocks: usize,
}

impl NetworkSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, hidden_dims: vec![], output_dim, activation: Activation::Identity, blocks: 0 }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        Self { input_dim, hidden_dims, output_dim, activation, blocks: 0 }
    }

    /// Generator/critic shape: one input layer to `hidden`, `blocks` residual
    /// blocks, linear head.
    pub fn residual(input_dim: usize, hidden: usize, output_dim: usize, blocks: usize, activation: Activation) -> Self {
        Self { input_dim, hidden_dims: vec![hidden], output_dim, activation, blocks }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(DiffError::InvalidSpec("dimensions must be strictly positive".into()));
        }
        if self.blocks > 0 && self.hidden_dims.is_empty() {
            return Err(DiffError::InvalidSpec("residual blocks need a hidden layer".into()));
        }
        Ok(())
    }

    fn last_hidden(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Parameter names and shapes, in construction order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let mut width = self.input_dim;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            out.push((format!("dense{i}.w"), (width, h)));
            out.push((format!("dense{i}.b"), (1, h)));
            width = h;
        }
        for i in 0..self.blocks {
            out.push((format!("block{i}.w"), (width, width)));
            out.push((format!("block{i}.b"), (1, width)));
        }
        out.push(("out.w".into(), (self.last_hidden(), self.output_dim)));
        out.push(("out.b".into(), (1, self.output_dim)));
        out
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, seed: u64) -> Result<ParamStore, DiffError> {
        self.validate()?;
        let mut init = Initializer::new(seed);
        let mut store = ParamStore::new(seed);
        for (name, (r, c)) in self.layout() {
            let m = if name.ends_with(".b") { Matrix::zeros(r, c) } else { init.glorot(r, c) };
            store.insert(name, m);
        }
        Ok(store)
    }

    pub fn zeros(&self) -> Result<ParamStore, DiffError> {
        self.validate()?;
        let mut store = ParamStore::new(0);
        for (name, (r, c)) in self.layout() {
            store.insert(name, Matrix::zeros(r, c));
        }
        Ok(store)
    }

    /// Checks that `params` holds exactly this spec's layout.
    pub fn check_params(&self, params: &ParamStore) -> Result<(), DiffError> {
        let layout = self.layout();
        for (name, shape) in &layout {
            let m = params.require(name)?;
            if m.shape() != *shape {
                return Err(DiffError::ShapeMismatch { layer: name.clone(), expected: *shape, got: m.shape() });
            }
            if !m.is_finite() {
                return Err(DiffError::NonFinite { layer: name.clone() });
            }
        }
        if params.len() != layout.len() {
            return Err(DiffError::InvalidSpec(format!(
                "parameter store has {} entries, spec expects {}",
                params.len(),
                layout.len()
            )));
        }
        Ok(())
    }

    /// Builds the forward pass into `g`. Errors on a non-finite activation,
    /// naming the layer that produced it.
    pub fn build(&self, g: &mut Graph, vars: &BTreeMap<String, Var>, input: Var) -> Result<Var, DiffError> {
        let (_, width) = g.value(input).shape();
        if width != self.input_dim {
            return Err(DiffError::ShapeMismatch {
                layer: "input".into(),
                expected: (g.value(input).rows(), self.input_dim),
                got: g.value(input).shape(),
            });
        }
        let p = |name: &str| vars.get(name).copied().ok_or_else(|| DiffError::MissingParam(name.to_string()));
        let finite = |g: &Graph, v: Var, layer: String| {
            if g.value(v).is_finite() {
                Ok(v)
            } else {
                Err(DiffError::NonFinite { layer })
            }
        };
        let mut h = input;
        for i in 0..self.hidden_dims.len() {
            let z = g.matmul(h, p(&format!("dense{i}.w"))?);
            let z = g.add_row(z, p(&format!("dense{i}.b"))?);
            h = self.activation.apply(g, z);
            h = finite(g, h, format!("dense{i}"))?;
        }
        for i in 0..self.blocks {
            let z = g.matmul(h, p(&format!("block{i}.w"))?);
            let z = g.add_row(z, p(&format!("block{i}.b"))?);
            let a = self.activation.apply(g, z);
            h = g.add(h, a);
            h = finite(g, h, format!("block{i}"))?;
        }
        let z = g.matmul(h, p("out.w")?);
        let out = g.add_row(z, p("out.b")?);
        finite(g, out, "out".into())
    }
}

/// Per-parameter gradients congruent with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientReport {
    pub params: BTreeMap<String, Matrix>,
    pub input: Option<Matrix>,
}

impl GradientReport {
    pub fn zeros_like(store: &ParamStore) -> Self {
        let params = store.iter().map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols()))).collect();
        Self { params, input: None }
    }

    pub fn from_graph(g: &Graph, names: &[String], grads: &[Var]) -> Self {
        let params = names.iter().zip(grads).map(|(n, &v)| (n.clone(), g.value(v).clone())).collect();
        Self { params, input: None }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Matrix::is_finite) && self.input.as_ref().is_none_or(Matrix::is_finite)
    }

    /// Name of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params.iter().find(|(_, m)| !m.is_finite()).map(|(n, _)| n.as_str())
    }

    pub fn norm(&self) -> f64 {
        self.params.values().map(|m| m.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for m in self.params.values_mut() {
            for v in m.data_mut() {
                *v *= c;
            }
        }
    }

    /// Adds `other` entrywise. Names missing from `self` are inserted.
    pub fn accumulate(&mut self, other: &GradientReport) {
        for (n, m) in &other.params {
            match self.params.get_mut(n) {
                Some(dst) => dst.add_assign(m),
                None => {
                    self.params.insert(n.clone(), m.clone());
                }
            }
        }
    }

    /// All entries flattened in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.values().flat_map(|m| m.data().iter().copied()).collect()
    }
}

fn leaves(g: &mut Graph, params: &ParamStore) -> (Vec<String>, Vec<Var>, BTreeMap<String, Var>) {
    let vars = params.to_graph(g);
    let names: Vec<String> = vars.keys().cloned().collect();
    let list: Vec<Var> = vars.values().copied().collect();
    (names, list, vars)
}

pub fn forward(spec: &NetworkSpec, params: &ParamStore, input: &Matrix) -> Result<Matrix, DiffError> {
    spec.check_params(params)?;
    let mut g = Graph::new();
    let vars = params.to_graph(&mut g);
    let x = g.constant(input.clone());
    let y = spec.build(&mut g, &vars, x)?;
    Ok(g.value(y).clone())
}

/// Gradient of `sum(upstream * forward(input))` w.r.t. every parameter.
pub fn grad_params(
    spec: &NetworkSpec,
    params: &ParamStore,
    input: &Matrix,
    upstream: &Matrix,
) -> Result<GradientReport, DiffError> {
    spec.check_params(params)?;
    let mut g = Graph::new();
    let (names, list, vars) = leaves(&mut g, params);
    let x = g.constant(input.clone());
    let y = spec.build(&mut g, &vars, x)?;
    if g.value(y).shape() != upstream.shape() {
        return Err(DiffError::ShapeMismatch { layer: "out".into(), expected: g.value(y).shape(), got: upstream.shape() });
    }
    let grads = g.vjp(y, upstream.clone(), &list);
    let report = GradientReport::from_graph(&g, &names, &grads);
    if let Some(bad) = report.first_non_finite() {
        return Err(DiffError::NonFinite { layer: bad.to_string() });
    }
    Ok(report)
}

/// Per-row gradient of a scalar-output network w.r.t. its input.
pub fn grad_input(spec: &NetworkSpec, params: &ParamStore, input: &Matrix) -> Result<Matrix, DiffError> {
    if spec.output_dim != 1 {
        return Err(DiffError::NonScalarOutput(spec.output_dim));
    }
    spec.check_params(params)?;
    let mut g = Graph::new();
    let vars = params.to_graph(&mut g);
    let x = g.leaf(input.clone());
    let y = spec.build(&mut g, &vars, x)?;
    let s = g.sum_all(y);
    let dx = g.grad(s, &[x])[0];
    Ok(g.value(dx).clone())
}

/// Builds `mean_i (||grad_x D(x_i)||_2 - 1)^2` into `g` for the critic
/// described by `spec`/`vars`. The returned node is differentiable w.r.t.
/// the critic parameters.
pub fn build_gradient_penalty(
    spec: &NetworkSpec,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    interpolates: Var,
) -> Result<Var, DiffError> {
    if spec.output_dim != 1 {
        return Err(DiffError::NonScalarOutput(spec.output_dim));
    }
    if g.value(interpolates).rows() == 0 {
        return Err(DiffError::EmptyBatch);
    }
    let d = spec.build(g, vars, interpolates)?;
    let s = g.sum_all(d);
    let dx = g.grad(s, &[interpolates])[0];
    let sq = g.mul(dx, dx);
    let sq = g.sum_cols(sq);
    let sq = g.add_scalar(sq, NORM_STABILIZER);
    let norm = g.sqrt(sq);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.mul(dev, dev);
    Ok(g.mean_all(dev2))
}

/// Gradient penalty over `interpolates` and its exact derivative w.r.t. the
/// critic parameters.
pub fn grad_penalty_params(
    spec: &NetworkSpec,
    params: &ParamStore,
    interpolates: &Matrix,
) -> Result<(f64, GradientReport), DiffError> {
    spec.check_params(params)?;
    if interpolates.rows() == 0 {
        return Err(DiffError::EmptyBatch);
    }
    let mut g = Graph::new();
    let (names, list, vars) = leaves(&mut g, params);
    let x = g.leaf(interpolates.clone());
    let pen = build_gradient_penalty(spec, &mut g, &vars, x)?;
    let grads = g.grad(pen, &list);
    let report = GradientReport::from_graph(&g, &names, &grads);
    if let Some(bad) = report.first_non_finite() {
        return Err(DiffError::NonFinite { layer: bad.to_string() });
    }
    Ok((g.scalar(pen), report))
}
