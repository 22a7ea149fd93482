//! Entropy-regularized policy-gradient finetuning of the decoder.
//!
//! Only the decoder's output projection moves. A value head over the frozen
//! hidden states spreads each sentence's BLEU-1 reward over its tokens; a
//! clamped-entropy bonus is added per token and the result weights
//! `grad ln pi(A_t)`.

mod value_head;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenSequence;
use crate::diffcore::{DiffError, Matrix, Optimizer, OptimizerConfig};
use crate::evalmetrics::{distinct_n, BleuReference};
use crate::latentgan::{generate_latents, GanError, GanPair};
use crate::seqvae::{DecodeMode, Rollout, SeqVae, VaeError, BLOCKED_TOKENS, POLICY_PARAMS};
use crate::util::SeededRng;

pub use value_head::{
    pretrain_value_head, refit_step, value_loss, value_residuals, ValueHead, ValueHeadConfig, ValueHistory, ValueSample,
};

/// Entropy clamp bounds.
pub const ENTROPY_FLOOR: f64 = 0.2;
pub const ENTROPY_CEIL: f64 = 1.0;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("empty reference corpus")]
    EmptyReferences,
    #[error("empty sentence")]
    EmptySentence,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error("value head diverged at epoch {epoch}: {detail}")]
    ValueHeadDiverged { epoch: usize, detail: String },
    #[error("frozen decoder parameters changed during finetuning")]
    FrozenChanged,
    #[error("invalid rl configuration: {0}")]
    Config(String),
}

/// BLEU order of the external reward.
pub const REWARD_ORDER: usize = 1;

/// BLEU-1 of `sentence` against the references.
pub fn external_reward(sentence: &TokenSequence, refs: &BleuReference<u32>) -> Result<f64, RlError> {
    if refs.is_empty() {
        return Err(RlError::EmptyReferences);
    }
    if sentence.words().is_empty() {
        return Err(RlError::EmptySentence);
    }
    Ok(refs.sentence_bleu(sentence.words(), REWARD_ORDER))
}

/// `-sum p ln p` in nats; zero-probability entries contribute nothing.
pub fn token_entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// `ln(clamp(h, 0.2, 1))`.
pub fn intrinsic_reward(h: f64) -> f64 {
    h.clamp(ENTROPY_FLOOR, ENTROPY_CEIL).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnsMode {
    /// `sum_{k<=t} gamma^k R_k + R^in_t`.
    PastInclusive,
    /// `sum_{k>=t} gamma^(k-t) R_k + R^in_t`.
    ToGo,
}

/// Per-token reward bookkeeping of one generated sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    /// Value-head rewards `R_t`.
    pub rewards: Vec<f64>,
    pub external: f64,
    pub entropies: Vec<f64>,
    pub intrinsic: Vec<f64>,
    pub gamma: f64,
}

impl RewardTrace {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub fn returns(trace: &RewardTrace, mode: ReturnsMode) -> Vec<f64> {
    let r = &trace.rewards;
    let n = r.len();
    let mut out = vec![0.0; n];
    match mode {
        ReturnsMode::PastInclusive => {
            let mut acc = 0.0;
            let mut disc = 1.0;
            for t in 0..n {
                acc += disc * r[t];
                disc *= trace.gamma;
                out[t] = acc + trace.intrinsic[t];
            }
        }
        ReturnsMode::ToGo => {
            let mut acc = 0.0;
            for t in (0..n).rev() {
                acc = r[t] + trace.gamma * acc;
                out[t] = acc + trace.intrinsic[t];
            }
        }
    }
    out
}

/// The trainable policy: the decoder's output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySlice {
    /// `hidden x vocab`.
    pub weight: Matrix,
    /// `1 x vocab`.
    pub bias: Matrix,
    /// Ids the policy never emits.
    pub blocked: Vec<usize>,
}

/// One on-policy decision weighted by its return.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub ret: f64,
}

impl PolicySlice {
    pub fn from_vae(vae: &SeqVae) -> Self {
        let p = vae.params();
        Self {
            weight: p.get(POLICY_PARAMS[0]).expect("policy weight").clone(),
            bias: p.get(POLICY_PARAMS[1]).expect("policy bias").clone(),
            blocked: BLOCKED_TOKENS.iter().map(|&b| b as usize).collect(),
        }
    }

    /// Writes the slice back into `vae`.
    pub fn apply_to(&self, vae: &mut SeqVae) -> Result<(), DiffError> {
        vae.params_mut().set(POLICY_PARAMS[0], self.weight.clone())?;
        vae.params_mut().set(POLICY_PARAMS[1], self.bias.clone())
    }

    /// `pi(. | state)` with blocked ids at zero.
    pub fn probs(&self, state: &[f64]) -> Vec<f64> {
        let h = Matrix::row_vector(state);
        let mut logits = h.matmul(&self.weight).add_row(&self.bias).into_data();
        for &b in &self.blocked {
            if b < logits.len() {
                logits[b] = f64::NEG_INFINITY;
            }
        }
        crate::diffcore::softmax(&logits)
    }

    pub fn log_prob(&self, state: &[f64], action: usize) -> f64 {
        self.probs(state)[action].ln()
    }

    /// `sum ret * grad ln pi(action | state)` over `batch`, divided by
    /// `normalizer`, as `(d weight, d bias)`.
    pub fn surrogate_gradient(&self, batch: &[Transition], normalizer: f64) -> (Matrix, Matrix) {
        let (h, v) = self.weight.shape();
        let mut dw = Matrix::zeros(h, v);
        let mut db = Matrix::zeros(1, v);
        for tr in batch {
            if tr.ret == 0.0 {
                continue;
            }
            let mut coef = self.probs(&tr.state);
            for c in coef.iter_mut() {
                *c = -*c;
            }
            coef[tr.action] += 1.0;
            for (j, c) in coef.iter().enumerate() {
                let g = tr.ret * c / normalizer;
                db[(0, j)] += g;
                for (i, s) in tr.state.iter().enumerate() {
                    dw[(i, j)] += g * s;
                }
            }
        }
        (dw, db)
    }
}

/// One gradient-ascent step on `sum ret * ln pi(action | state)` averaged
/// over `sentences`. Returns `false` (parameters untouched) when the
/// gradient is not finite.
pub fn pg_step(policy: &mut PolicySlice, batch: &[Transition], sentences: usize, learning_rate: f64) -> bool {
    let (dw, db) = policy.surrogate_gradient(batch, sentences.max(1) as f64);
    if !dw.is_finite() || !db.is_finite() {
        log::warn!("non-finite policy gradient; step skipped");
        return false;
    }
    policy.weight.scaled_add_assign(learning_rate, &dw);
    policy.bias.scaled_add_assign(learning_rate, &db);
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub returns_mode: ReturnsMode,
    /// Divide entropies by `ln |V|` before clamping.
    pub normalize_entropy: bool,
    /// Subtract, at each token position, the batch-mean return before the
    /// policy step.
    #[serde(default)]
    pub baseline: bool,
    /// MAE steps a working copy of the value head takes on each epoch's
    /// scored batch, after the policy step. 0 keeps the pretrained head.
    #[serde(default)]
    pub value_head_steps: usize,
    /// Adam step size of those refits.
    #[serde(default = "default_refit_rate")]
    pub value_head_learning_rate: f64,
}

fn default_refit_rate() -> f64 {
    1e-3
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("rl batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("rl learning_rate must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err("gamma must lie in [0, 1]".into());
        }
        if self.value_head_steps > 0 && !(self.value_head_learning_rate > 0.0 && self.value_head_learning_rate.is_finite()) {
            return Err("value_head_learning_rate must be positive".into());
        }
        Ok(())
    }
}

/// Rollouts of `latents` under the current policy with rewards attached.
pub struct ScoredBatch {
    pub rollouts: Vec<Rollout>,
    pub traces: Vec<RewardTrace>,
}

/// Samples sentences from `latents`, scores them and builds reward traces.
pub fn score_rollouts(
    vae: &SeqVae,
    vh: &ValueHead,
    latents: &Matrix,
    refs: &BleuReference<u32>,
    cfg: &RlConfig,
    rng: &mut SeededRng,
) -> Result<ScoredBatch, RlError> {
    let rollouts = vae.rollout_batch(latents, DecodeMode::Sample, 1.0, rng)?;
    let scale = if cfg.normalize_entropy { (vae.spec().vocab_size as f64).ln() } else { 1.0 };
    let mut traces = Vec::with_capacity(rollouts.len());
    for r in &rollouts {
        let external = if r.sequence.words().is_empty() { 0.0 } else { external_reward(&r.sequence, refs)? };
        let rewards = vh.per_token(&Matrix::from_rows(&r.value_states))?;
        let entropies: Vec<f64> = r.probs.iter().map(|p| token_entropy(p)).collect();
        let intrinsic = entropies.iter().map(|h| intrinsic_reward(h / scale)).collect();
        traces.push(RewardTrace { rewards, external, entropies, intrinsic, gamma: cfg.gamma });
    }
    Ok(ScoredBatch { rollouts, traces })
}

/// On-policy transitions; forced EOS steps carry no decision and are
/// dropped.
pub fn transitions(batch: &ScoredBatch, mode: ReturnsMode) -> Vec<Transition> {
    let g: Vec<Vec<f64>> = batch.traces.iter().map(|t| returns(t, mode)).collect();
    build_transitions(batch, &g)
}

/// Like [`transitions`], with each return reduced by the mean return of all
/// sentences that reached the same position.
pub fn baselined_transitions(batch: &ScoredBatch, mode: ReturnsMode) -> Vec<Transition> {
    let mut g: Vec<Vec<f64>> = batch.traces.iter().map(|t| returns(t, mode)).collect();
    let longest = g.iter().map(Vec::len).max().unwrap_or(0);
    for t in 0..longest {
        let col: Vec<f64> = g.iter().filter_map(|r| r.get(t).copied()).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        for r in g.iter_mut().filter(|r| r.len() > t) {
            r[t] -= mean;
        }
    }
    build_transitions(batch, &g)
}

fn build_transitions(batch: &ScoredBatch, g: &[Vec<f64>]) -> Vec<Transition> {
    let mut out = Vec::new();
    for (r, g) in batch.rollouts.iter().zip(g) {
        for (t, &a) in r.actions().iter().enumerate() {
            if r.forced[t] {
                continue;
            }
            out.push(Transition { state: r.policy_states[t].clone(), action: a as usize, ret: g[t] });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlEpoch {
    pub epoch: usize,
    pub mean_external: f64,
    /// Mean per-sentence sum of value-head rewards.
    pub mean_estimated: f64,
    pub mean_entropy: f64,
    pub mean_intrinsic: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub step_applied: bool,
}

/// Per-epoch summary of a scored batch (statistics of the pre-update policy).
pub fn summarize(epoch: usize, batch: &ScoredBatch, step_applied: bool) -> RlEpoch {
    let n = batch.traces.len().max(1) as f64;
    let tokens: usize = batch.traces.iter().map(RewardTrace::len).sum();
    let tok = tokens.max(1) as f64;
    let words: Vec<&[u32]> = batch.rollouts.iter().map(|r| r.sequence.words()).collect();
    RlEpoch {
        epoch,
        mean_external: batch.traces.iter().map(|t| t.external).sum::<f64>() / n,
        mean_estimated: batch.traces.iter().map(|t| t.rewards.iter().sum::<f64>()).sum::<f64>() / n,
        mean_entropy: batch.traces.iter().flat_map(|t| &t.entropies).sum::<f64>() / tok,
        mean_intrinsic: batch.traces.iter().flat_map(|t| &t.intrinsic).sum::<f64>() / tok,
        distinct_1: distinct_n(&words, 1),
        distinct_2: distinct_n(&words, 2),
        step_applied,
    }
}

/// Finetunes the decoder's output projection for `cfg.epochs` epochs.
/// `on_epoch` sees each epoch record as it is produced.
pub fn finetune_rl(
    vae: &SeqVae,
    vh: &ValueHead,
    gan: &GanPair,
    refs: &BleuReference<u32>,
    cfg: &RlConfig,
    rng: &mut SeededRng,
    mut on_epoch: impl FnMut(&RlEpoch, &SeqVae),
) -> Result<(SeqVae, Vec<RlEpoch>), RlError> {
    cfg.validate().map_err(RlError::Config)?;
    if refs.is_empty() {
        return Err(RlError::EmptyReferences);
    }
    let frozen = vae.frozen_hash();
    let mut out = vae.clone();
    let mut head = vh.clone();
    let mut head_opt = Optimizer::new(OptimizerConfig::adam(cfg.value_head_learning_rate, 0.9, 0.999));
    let mut policy = PolicySlice::from_vae(vae);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut warned = false;
    for epoch in 0..cfg.epochs {
        let latents = generate_latents(gan, cfg.batch_size, rng)?;
        let batch = score_rollouts(&out, &head, &latents, refs, cfg, rng)?;
        if !warned {
            rule_of_thumb_check(&batch.traces);
            warned = true;
        }
        let trans = if cfg.baseline {
            baselined_transitions(&batch, cfg.returns_mode)
        } else {
            transitions(&batch, cfg.returns_mode)
        };
        let applied = pg_step(&mut policy, &trans, batch.traces.len(), cfg.learning_rate);
        policy.apply_to(&mut out)?;
        if cfg.value_head_steps > 0 {
            let samples: Vec<ValueSample> = batch
                .rollouts
                .iter()
                .zip(&batch.traces)
                .filter(|(r, _)| !r.value_states.is_empty())
                .map(|(r, t)| ValueSample { states: Matrix::from_rows(&r.value_states), reward: t.external })
                .collect();
            let refs: Vec<&ValueSample> = samples.iter().collect();
            for _ in 0..cfg.value_head_steps {
                refit_step(&mut head, &refs, &mut head_opt, epoch)?;
            }
        }
        let rec = summarize(epoch, &batch, applied);
        on_epoch(&rec, &out);
        history.push(rec);
    }
    if out.frozen_hash() != frozen {
        return Err(RlError::FrozenChanged);
    }
    Ok((out, history))
}

/// Warns when the largest entropy penalty can outweigh the best observed
/// external reward. Returns whether it warned.
pub fn rule_of_thumb_check(traces: &[RewardTrace]) -> bool {
    let max_reward = traces.iter().map(|t| t.external).fold(0.0f64, f64::max);
    let max_penalty = ENTROPY_FLOOR.ln().abs();
    if max_penalty >= max_reward {
        log::warn!(
            "entropy penalty bound {max_penalty:.3} is not below the best observed reward {max_reward:.3}; \
             low-entropy tokens can dominate the return"
        );
        return true;
    }
    false
}

#[cfg(test)]
mod tests;
