use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DecodeMode, GaussianPosterior, SeqVae, SeqVaeSpec, VaeError};
use crate::corpus::{CorpusSplits, TokenSequence};
use crate::diffcore::{softmax, Matrix, Optimizer, OptimizerConfig};
use crate::util::{permutation, SeededRng};

/// `0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)`: KL to the standard normal.
pub fn kl(p: &GaussianPosterior) -> f64 {
    0.5 * p.mu.iter().zip(&p.logvar).map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv).sum::<f64>()
}

/// Linear KL-weight ramp from 0 at step 0 to `beta_target` at
/// `annealing_ratio * total_steps`, then constant.
///
/// `ratio_increase` is carried for configuration parity with cyclical
/// schedules and does not affect the ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub beta_target: f64,
    pub annealing_ratio: f64,
    pub ratio_increase: f64,
    pub total_steps: usize,
}

impl AnnealSchedule {
    pub fn beta(&self, step: usize) -> f64 {
        let ramp = self.annealing_ratio * self.total_steps as f64;
        if ramp <= 0.0 {
            return self.beta_target;
        }
        self.beta_target * (step as f64 / ramp).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub beta_target: f64,
    pub annealing_ratio: f64,
    /// Not used by the linear ramp; see [`AnnealSchedule`].
    pub ratio_increase: f64,
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("vae batch_size must be positive".into());
        }
        if !(self.beta_target >= 0.0) {
            return Err("beta_target must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.annealing_ratio) || !(0.0..=1.0).contains(&self.ratio_increase) {
            return Err("annealing_ratio and ratio_increase must lie in [0, 1]".into());
        }
        self.optimizer.validate()
    }

    pub fn spec(&self, vocab_size: usize) -> SeqVaeSpec {
        SeqVaeSpec {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub beta: f64,
    pub mean_loss: f64,
    pub mean_nll: f64,
    pub mean_kl: f64,
    /// Teacher-forced greedy token accuracy on the dev split from the
    /// posterior mean; `None` without a dev split.
    pub dev_token_accuracy: Option<f64>,
    pub dev_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VaeHistory {
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}; last finite parameters retained")]
    Diverged { step: usize, last_good: Box<SeqVae>, history: VaeHistory },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Mean teacher-forced NLL and greedy token accuracy, using `z = mu`.
pub fn reconstruction_stats(vae: &SeqVae, seqs: &[TokenSequence]) -> (f64, f64) {
    let posts = vae.encode_batch(seqs);
    let mut nll = 0.0;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (s, p) in seqs.iter().zip(&posts) {
        let mut state = vae.start(&p.mu).expect("latent dim from encoder");
        for &tok in &s.ids()[1..] {
            let logits = vae.logits(&Matrix::row_vector(&state.hidden));
            let probs = softmax(logits.data());
            nll -= probs[tok as usize].ln();
            if super::argmax(&super::masked_softmax(logits.data())) == tok as usize {
                hits += 1;
            }
            total += 1;
            if state.prefix.len() + 1 < vae.spec().max_len {
                vae.advance(&mut state, tok).expect("vocab id");
            }
        }
    }
    (nll / seqs.len().max(1) as f64, hits as f64 / total.max(1) as f64)
}

/// Exact-match rate of greedy reconstruction from the posterior mean.
pub fn exact_reconstruction_rate(vae: &SeqVae, seqs: &[TokenSequence]) -> f64 {
    let posts = vae.encode_batch(seqs);
    let latents = Matrix::from_rows(&posts.into_iter().map(|p| p.mu).collect::<Vec<_>>());
    let mut rng = crate::util::seeded(0);
    let out = vae.rollout_batch(&latents, DecodeMode::Greedy, 1.0, &mut rng).expect("valid latents");
    let hits = out.iter().zip(seqs).filter(|(r, s)| &r.sequence == *s).count();
    hits as f64 / seqs.len().max(1) as f64
}

/// Trains a fresh model on `splits.train` minimizing `nll + beta(step) * kl`.
pub fn train_vae(
    splits: &CorpusSplits,
    vocab_size: usize,
    cfg: &VaeConfig,
    seed: u64,
    rng: &mut SeededRng,
) -> Result<(SeqVae, VaeHistory), TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let vae = SeqVae::new(cfg.spec(vocab_size), seed)?;
    continue_training(vae, splits, cfg, rng)
}

/// Trains an existing model for `cfg.epochs` more epochs.
pub fn continue_training(
    mut vae: SeqVae,
    splits: &CorpusSplits,
    cfg: &VaeConfig,
    rng: &mut SeededRng,
) -> Result<(SeqVae, VaeHistory), TrainError> {
    let train = &splits.train;
    if train.is_empty() {
        return Err(TrainError::Config("empty train split".into()));
    }
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = AnnealSchedule {
        beta_target: cfg.beta_target,
        annealing_ratio: cfg.annealing_ratio,
        ratio_increase: cfg.ratio_increase,
        total_steps: cfg.epochs * batches_per_epoch,
    };
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut history = VaeHistory::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = permutation(rng, train.len());
        let (mut sum_loss, mut sum_nll, mut sum_kl) = (0.0, 0.0, 0.0);
        let beta_start = schedule.beta(step);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&TokenSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let noise = vae.draw_noise(seqs.len(), rng);
            let beta = schedule.beta(step);
            let (loss, nll, kl, grads) = vae.loss_and_grad(&seqs, &noise, beta)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { step, last_good: Box::new(vae), history });
            }
            let before = vae.params().clone();
            opt.step(vae.params_mut(), &grads);
            if !vae.params().is_finite() {
                *vae.params_mut() = before;
                return Err(TrainError::Diverged { step, last_good: Box::new(vae), history });
            }
            history.step_losses.push(loss);
            sum_loss += loss;
            sum_nll += nll;
            sum_kl += kl;
            step += 1;
        }
        let nb = batches_per_epoch as f64;
        let (dev_nll, dev_acc) = if splits.dev.is_empty() {
            (None, None)
        } else {
            let (n, a) = reconstruction_stats(&vae, &splits.dev);
            (Some(n), Some(a))
        };
        log::debug!("vae epoch {epoch}: loss {:.4} nll {:.4} kl {:.4}", sum_loss / nb, sum_nll / nb, sum_kl / nb);
        history.epochs.push(EpochStats {
            epoch,
            beta: beta_start,
            mean_loss: sum_loss / nb,
            mean_nll: sum_nll / nb,
            mean_kl: sum_kl / nb,
            dev_token_accuracy: dev_acc,
            dev_nll,
        });
    }
    Ok((vae, history))
}
