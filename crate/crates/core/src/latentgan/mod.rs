//! WGAN-GP over the VAE latent space.
//!
//! The generator maps standard-normal noise to latent vectors; the critic
//! scores latent vectors. Real samples are encoder posterior means.

mod schedule;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{
    build_gradient_penalty, forward, Activation, DiffError, Graph, GradientReport, Matrix, NetworkSpec, Optimizer,
    OptimizerConfig, ParamStore, Var,
};
use crate::util::{derive_seed, normal_matrix, permutation, SeededRng};

pub use schedule::{
    adaptive_decide, adaptive_ratios, lambda_schedule, loss_ratio, replay_tape, Decision, ScheduleMode,
    SchedulerState, TapeStep, DEFAULT_CRITIC_STEPS, DEFAULT_LAMBDA0, DEFAULT_RATIO_EPS,
};

#[derive(Debug, Error)]
pub enum GanError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid gan configuration: {0}")]
    Config(String),
    #[error("batch sizes differ: {0} real vs {1} fake")]
    BatchMismatch(usize, usize),
    #[error("non-finite {what} loss at step {step}; best snapshot retained")]
    Diverged { what: &'static str, step: usize, best: Box<GanPair>, history: GanHistory },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanPair {
    pub generator: NetworkSpec,
    pub generator_params: ParamStore,
    pub critic: NetworkSpec,
    pub critic_params: ParamStore,
    pub noise_dim: usize,
    pub latent_dim: usize,
    pub gp_lambda: f64,
}

/// Shape of both networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanArchitecture {
    pub noise_dim: usize,
    pub hidden_dim: usize,
    pub blocks: usize,
    pub activation: Activation,
    pub gp_lambda: f64,
}

impl GanPair {
    pub fn new(arch: &GanArchitecture, latent_dim: usize, seed: u64) -> Result<Self, GanError> {
        let generator = NetworkSpec::residual(arch.noise_dim, arch.hidden_dim, latent_dim, arch.blocks, arch.activation);
        let critic = NetworkSpec::residual(latent_dim, arch.hidden_dim, 1, arch.blocks, arch.activation);
        let generator_params = generator.init(derive_seed(seed, "generator"))?;
        let critic_params = critic.init(derive_seed(seed, "critic"))?;
        Self::from_parts(generator, generator_params, critic, critic_params, arch.gp_lambda)
    }

    pub fn from_parts(
        generator: NetworkSpec,
        generator_params: ParamStore,
        critic: NetworkSpec,
        critic_params: ParamStore,
        gp_lambda: f64,
    ) -> Result<Self, GanError> {
        if generator.output_dim != critic.input_dim {
            return Err(GanError::Config(format!(
                "generator output dim {} != critic input dim {}",
                generator.output_dim, critic.input_dim
            )));
        }
        if critic.output_dim != 1 {
            return Err(DiffError::NonScalarOutput(critic.output_dim).into());
        }
        if !(gp_lambda >= 0.0) {
            return Err(GanError::Config("gp_lambda must be non-negative".into()));
        }
        generator.check_params(&generator_params)?;
        critic.check_params(&critic_params)?;
        Ok(Self {
            noise_dim: generator.input_dim,
            latent_dim: generator.output_dim,
            generator,
            generator_params,
            critic,
            critic_params,
            gp_lambda,
        })
    }

    pub fn params_hash(&self) -> String {
        format!("{}:{}", self.generator_params.hash(), self.critic_params.hash())
    }

    pub fn draw_noise(&self, n: usize, rng: &mut SeededRng) -> Matrix {
        normal_matrix(rng, n, self.noise_dim)
    }

    pub fn critic_scores(&self, x: &Matrix) -> Result<Matrix, GanError> {
        Ok(forward(&self.critic, &self.critic_params, x)?)
    }
}

/// `z_hat = G(eps)`, `eps ~ N(0, I)`.
pub fn generate_latents(g: &GanPair, n: usize, rng: &mut SeededRng) -> Result<Matrix, GanError> {
    let eps = g.draw_noise(n, rng);
    generate_from_noise(g, &eps)
}

pub fn generate_from_noise(g: &GanPair, noise: &Matrix) -> Result<Matrix, GanError> {
    Ok(forward(&g.generator, &g.generator_params, noise)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub loss: f64,
    /// `mean D(real) - mean D(fake)`.
    pub wasserstein: f64,
    pub penalty: f64,
    pub grads: GradientReport,
}

fn param_leaves(g: &mut Graph, params: &ParamStore) -> (Vec<String>, Vec<Var>, std::collections::BTreeMap<String, Var>) {
    let vars = params.to_graph(g);
    let names: Vec<String> = vars.keys().cloned().collect();
    let list: Vec<Var> = vars.values().copied().collect();
    (names, list, vars)
}

/// `-(mean D(real) - mean D(fake)) + gp_lambda * penalty`, the penalty taken
/// at `u * real + (1 - u) * fake` with one `u` per row.
pub fn critic_loss(g: &GanPair, real: &Matrix, fake: &Matrix, u: &[f64]) -> Result<CriticLoss, GanError> {
    if real.rows() != fake.rows() || u.len() != real.rows() {
        return Err(GanError::BatchMismatch(real.rows(), fake.rows()));
    }
    if real.rows() == 0 {
        return Err(DiffError::EmptyBatch.into());
    }
    g.critic.check_params(&g.critic_params)?;
    let mut graph = Graph::new();
    let (names, list, vars) = param_leaves(&mut graph, &g.critic_params);
    let xr = graph.constant(real.clone());
    let xf = graph.constant(fake.clone());
    let dr = g.critic.build(&mut graph, &vars, xr)?;
    let df = g.critic.build(&mut graph, &vars, xf)?;
    let mr = graph.mean_all(dr);
    let mf = graph.mean_all(df);
    let mut loss = graph.sub(mf, mr);
    let mut penalty = 0.0;
    if g.gp_lambda > 0.0 {
        let mut interp = real.clone();
        for (i, &ui) in u.iter().enumerate() {
            for (x, &f) in interp.row_mut(i).iter_mut().zip(fake.row(i)) {
                *x = ui * *x + (1.0 - ui) * f;
            }
        }
        let xi = graph.leaf(interp);
        let pen = build_gradient_penalty(&g.critic, &mut graph, &vars, xi)?;
        penalty = graph.scalar(pen);
        let weighted = graph.scale(pen, g.gp_lambda);
        loss = graph.add(loss, weighted);
    }
    let grads = graph.grad(loss, &list);
    let grads = GradientReport::from_graph(&graph, &names, &grads);
    Ok(CriticLoss {
        loss: graph.scalar(loss),
        wasserstein: graph.scalar(mr) - graph.scalar(mf),
        penalty,
        grads,
    })
}

/// `-mean D(G(eps))` and its gradient w.r.t. the generator parameters.
pub fn generator_loss(g: &GanPair, noise: &Matrix) -> Result<(f64, GradientReport), GanError> {
    if noise.rows() == 0 {
        return Err(DiffError::EmptyBatch.into());
    }
    g.generator.check_params(&g.generator_params)?;
    g.critic.check_params(&g.critic_params)?;
    let mut graph = Graph::new();
    let (names, list, gvars) = param_leaves(&mut graph, &g.generator_params);
    let cvars = g.critic_params.to_graph(&mut graph);
    let eps = graph.constant(noise.clone());
    let z = g.generator.build(&mut graph, &gvars, eps)?;
    let d = g.critic.build(&mut graph, &cvars, z)?;
    let m = graph.mean_all(d);
    let loss = graph.scale(m, -1.0);
    let grads = graph.grad(loss, &list);
    Ok((graph.scalar(loss), GradientReport::from_graph(&graph, &names, &grads)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub generator_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    pub mode: ScheduleMode,
    /// Critic updates per generator update in standard mode.
    pub critic_steps: usize,
    pub lambda0: f64,
    pub ratio_eps: f64,
    pub smoothing_window: usize,
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("gan batch_size must be positive".into());
        }
        if self.critic_steps == 0 {
            return Err("critic_steps must be at least 1".into());
        }
        if !(self.lambda0 > 0.0 && self.lambda0 <= 1.0) {
            return Err(format!("lambda0 must lie in (0, 1], got {}", self.lambda0));
        }
        if !(self.ratio_eps > 0.0) {
            return Err("ratio_eps must be positive".into());
        }
        if self.smoothing_window == 0 {
            return Err("smoothing_window must be at least 1".into());
        }
        self.generator_optimizer.validate()?;
        self.critic_optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanStep {
    pub epoch: usize,
    pub decision: Decision,
    pub loss_g: f64,
    pub loss_d: f64,
    pub wasserstein: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub lambda_adaptive: f64,
    pub mean_wasserstein: f64,
    pub generator_updates: usize,
    pub critic_updates: usize,
    /// Selection score of this epoch's snapshot, when a selector is given.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GanHistory {
    pub steps: Vec<GanStep>,
    pub epochs: Vec<GanEpoch>,
    pub best_epoch: Option<usize>,
    pub generator_updates: usize,
    pub critic_updates: usize,
}

/// Scores an epoch snapshot; higher is better.
pub type Selector<'a> = dyn FnMut(&GanPair) -> f64 + 'a;

/// Trains `pair` on the rows of `latents`. Each step updates exactly one
/// network. An epoch is `ceil(n / batch_size)` steps. With a selector the
/// best-scoring epoch snapshot is returned, otherwise the last one.
pub fn train_gan(
    mut pair: GanPair,
    latents: &Matrix,
    cfg: &GanConfig,
    rng: &mut SeededRng,
    mut selector: Option<&mut Selector<'_>>,
) -> Result<(GanPair, GanHistory), GanError> {
    cfg.validate().map_err(GanError::Config)?;
    if latents.rows() == 0 {
        return Err(GanError::Config("empty latent corpus".into()));
    }
    if latents.cols() != pair.latent_dim {
        return Err(GanError::Config(format!("latents have dim {}, gan expects {}", latents.cols(), pair.latent_dim)));
    }
    let n = latents.rows();
    let batch = cfg.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut opt_g = Optimizer::new(cfg.generator_optimizer);
    let mut opt_d = Optimizer::new(cfg.critic_optimizer);
    let mut sched = SchedulerState::new(cfg.ratio_eps, cfg.lambda0, cfg.smoothing_window);
    let mut history = GanHistory::default();
    let mut best: Option<(f64, GanPair)> = None;
    let mut step = 0usize;
    let mut cycle = 0usize;
    let mut order = permutation(rng, n);
    let mut cursor = 0usize;

    for epoch in 0..cfg.epochs {
        sched.set_epoch(epoch, cfg.epochs, cfg.lambda0);
        let (g0, d0) = (sched.generator_updates, sched.critic_updates);
        let mut w_sum = 0.0;
        for _ in 0..steps_per_epoch {
            if cursor + batch > n {
                order = permutation(rng, n);
                cursor = 0;
            }
            let real = latents.select_rows(&order[cursor..cursor + batch]);
            cursor += batch;
            let noise = pair.draw_noise(batch, rng);
            let Some(fake) = non_finite_as_none(generate_from_noise(&pair, &noise))? else {
                return Err(diverged("generator", step, best, pair, &sched, history));
            };
            let u: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
            let cl = non_finite_as_none(critic_loss(&pair, &real, &fake, &u))?;
            let gl = non_finite_as_none(generator_loss(&pair, &noise))?;
            let bad = match (&cl, &gl) {
                (Some(c), _) if !c.loss.is_finite() || !c.grads.is_finite() => Some("critic"),
                (None, _) => Some("critic"),
                (_, Some((l, g))) if !l.is_finite() || !g.is_finite() => Some("generator"),
                (_, None) => Some("generator"),
                _ => None,
            };
            if let Some(what) = bad {
                return Err(diverged(what, step, best, pair, &sched, history));
            }
            let (cl, (gl, ggrads)) = (cl.expect("checked"), gl.expect("checked"));
            sched.observe(gl, cl.loss);
            let decision = match cfg.mode {
                ScheduleMode::Adaptive => sched.decide(),
                ScheduleMode::Standard => {
                    let d = if cycle < cfg.critic_steps { Decision::UpdateDiscriminator } else { Decision::UpdateGenerator };
                    cycle = (cycle + 1) % (cfg.critic_steps + 1);
                    d
                }
            };
            let (store, opt, grads, what) = match decision {
                Decision::UpdateDiscriminator => (&mut pair.critic_params, &mut opt_d, &cl.grads, "critic"),
                Decision::UpdateGenerator => (&mut pair.generator_params, &mut opt_g, &ggrads, "generator"),
            };
            let before = store.clone();
            opt.step(store, grads);
            if !store.is_finite() {
                *store = before;
                return Err(diverged(what, step, best, pair, &sched, history));
            }
            sched.record(decision);
            w_sum += cl.wasserstein;
            history.steps.push(GanStep { epoch, decision, loss_g: gl, loss_d: cl.loss, wasserstein: cl.wasserstein });
            step += 1;
        }
        let score = selector.as_mut().map(|f| f(&pair));
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, pair.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        log::debug!("gan epoch {epoch}: W {:.4} lambda {:.3}", w_sum / steps_per_epoch as f64, sched.lambda_adaptive);
        history.epochs.push(GanEpoch {
            epoch,
            lambda_adaptive: sched.lambda_adaptive,
            mean_wasserstein: w_sum / steps_per_epoch as f64,
            generator_updates: sched.generator_updates - g0,
            critic_updates: sched.critic_updates - d0,
            score,
        });
    }
    history.generator_updates = sched.generator_updates;
    history.critic_updates = sched.critic_updates;
    let out = match best {
        Some((_, p)) => p,
        None => {
            if cfg.epochs > 0 {
                history.best_epoch = Some(cfg.epochs - 1);
            }
            pair
        }
    };
    Ok((out, history))
}

/// Maps a non-finite activation error to `None`; other errors pass through.
fn non_finite_as_none<T>(r: Result<T, GanError>) -> Result<Option<T>, GanError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(GanError::Diff(DiffError::NonFinite { .. })) => Ok(None),
        Err(e) => Err(e),
    }
}

fn diverged(
    what: &'static str,
    step: usize,
    best: Option<(f64, GanPair)>,
    last: GanPair,
    sched: &SchedulerState,
    mut history: GanHistory,
) -> GanError {
    history.generator_updates = sched.generator_updates;
    history.critic_updates = sched.critic_updates;
    let best = best.map(|(_, p)| p).unwrap_or(last);
    GanError::Diverged { what, step, best: Box::new(best), history }
}
