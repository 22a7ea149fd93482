use serde::{Deserialize, Serialize};

use super::RlError;
use crate::diffcore::{forward, Activation, Graph, GradientReport, Matrix, NetworkSpec, Optimizer, OptimizerConfig, ParamStore};
use crate::util::{permutation, SeededRng};

/// Scalar head over decoder hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHead {
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

/// Hidden states of one generated sentence (one row per emitted token) and
/// its external reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSample {
    pub states: Matrix,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueHeadConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl ValueHeadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("value head batch_size must be positive".into());
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValueHistory {
    /// Mean minibatch MAE seen during each epoch.
    pub epoch_mae: Vec<f64>,
}

impl ValueHead {
    pub fn new(hidden_dim: usize, cfg: &ValueHeadConfig, seed: u64) -> Result<Self, RlError> {
        let spec = NetworkSpec::mlp(hidden_dim, cfg.hidden_dims.clone(), 1, cfg.activation);
        let params = spec.init(seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: NetworkSpec, params: ParamStore) -> Result<Self, RlError> {
        if spec.output_dim != 1 {
            return Err(crate::diffcore::DiffError::NonScalarOutput(spec.output_dim).into());
        }
        spec.check_params(&params)?;
        Ok(Self { spec, params })
    }

    /// `nu(S_t)` for every row of `states`.
    pub fn per_token(&self, states: &Matrix) -> Result<Vec<f64>, RlError> {
        if states.rows() == 0 {
            return Ok(vec![]);
        }
        Ok(forward(&self.spec, &self.params, states)?.into_data())
    }
}

/// `sum_t nu(S_t) - R^ex` for every sample; the MAE is the mean of their
/// absolute values.
pub fn value_residuals(vh: &ValueHead, samples: &[ValueSample]) -> Result<Vec<f64>, RlError> {
    samples
        .iter()
        .map(|s| Ok(vh.per_token(&s.states)?.iter().sum::<f64>() - s.reward))
        .collect()
}

/// MAE of `batch` and its parameter gradient.
pub fn value_loss(vh: &ValueHead, batch: &[&ValueSample]) -> Result<(f64, GradientReport), RlError> {
    let total: usize = batch.iter().map(|s| s.states.rows()).sum();
    let width = vh.spec.input_dim;
    let mut stacked = Matrix::zeros(total, width);
    let mut segments = Matrix::zeros(batch.len(), total);
    let mut rewards = Matrix::zeros(batch.len(), 1);
    let mut row = 0;
    for (i, s) in batch.iter().enumerate() {
        for t in 0..s.states.rows() {
            stacked.row_mut(row).copy_from_slice(s.states.row(t));
            segments[(i, row)] = 1.0;
            row += 1;
        }
        rewards[(i, 0)] = s.reward;
    }
    let mut g = Graph::new();
    let vars = vh.params.to_graph(&mut g);
    let names: Vec<String> = vars.keys().cloned().collect();
    let list: Vec<_> = vars.values().copied().collect();
    let x = g.constant(stacked);
    let nu = vh.spec.build(&mut g, &vars, x)?;
    let seg = g.constant(segments);
    let sums = g.matmul(seg, nu);
    let r = g.constant(rewards);
    let diff = g.sub(sums, r);
    let abs = g.abs(diff);
    let loss = g.mean_all(abs);
    let grads = g.grad(loss, &list);
    Ok((g.scalar(loss), GradientReport::from_graph(&g, &names, &grads)))
}

/// One optimizer step on the MAE of `batch`; returns the pre-step loss.
pub fn refit_step(vh: &mut ValueHead, batch: &[&ValueSample], opt: &mut Optimizer, epoch: usize) -> Result<f64, RlError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let (loss, grads) = value_loss(vh, batch)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(RlError::ValueHeadDiverged {
            epoch,
            detail: format!("loss {loss}, first bad gradient {:?}", grads.first_non_finite()),
        });
    }
    opt.step(&mut vh.params, &grads);
    Ok(loss)
}

/// Minimizes the mean absolute error between each sentence's summed head
/// outputs and its external reward. Sentences without tokens are skipped.
pub fn pretrain_value_head(
    mut vh: ValueHead,
    samples: &[ValueSample],
    cfg: &ValueHeadConfig,
    rng: &mut SeededRng,
) -> Result<(ValueHead, ValueHistory), RlError> {
    cfg.validate().map_err(RlError::Config)?;
    let usable: Vec<&ValueSample> = samples.iter().filter(|s| s.states.rows() > 0).collect();
    let mut history = ValueHistory::default();
    if usable.is_empty() {
        return Ok((vh, history));
    }
    let mut opt = Optimizer::new(cfg.optimizer);
    for epoch in 0..cfg.epochs {
        let order = permutation(rng, usable.len());
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ValueSample> = chunk.iter().map(|&i| usable[i]).collect();
            let loss = refit_step(&mut vh, &batch, &mut opt, epoch)?;
            weighted += loss * batch.len() as f64;
        }
        history.epoch_mae.push(weighted / usable.len() as f64);
    }
    Ok((vh, history))
}
