//! Recurrent sequence VAE.
//!
//! The encoder is a tanh RNN over the sentence whose final state is mapped to
//! a diagonal Gaussian posterior. The decoder is a tanh RNN that receives the
//! latent twice: through its initial hidden state and concatenated to every
//! input embedding. Its final projection (`out.w`, `out.b`) is the policy
//! that RL finetuning later updates; everything else is frozen then.

mod train;

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TokenSequence, BOS, EOS, PAD};
use crate::diffcore::{softmax, DiffError, Graph, GradientReport, Initializer, Matrix, ParamStore, Var};
use crate::util::{normal_matrix, sample_index, standard_normal, SeededRng};

pub use train::{
    continue_training, exact_reconstruction_rate, kl, reconstruction_stats, train_vae, AnnealSchedule, EpochStats,
    TrainError, VaeConfig, VaeHistory,
};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Parameters making up the policy (output projection).
pub const POLICY_PARAMS: [&str; 2] = ["out.w", "out.b"];

/// Token ids the decoder never emits.
pub const BLOCKED_TOKENS: [u32; 2] = [PAD, BOS];

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("decoder prefix of length {len} reached the maximum length {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("latent has dimension {got}, expected {expected}")]
    LatentDim { expected: usize, got: usize },
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqVaeSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Maximum sequence length, BOS and EOS included.
    pub max_len: usize,
}

impl SeqVaeSpec {
    pub fn layout(&self) -> Vec<(&'static str, (usize, usize))> {
        let (v, e, h, l) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.latent_dim);
        vec![
            ("embed", (v, e)),
            ("enc.wx", (e, h)),
            ("enc.wh", (h, h)),
            ("enc.b", (1, h)),
            ("enc.mu.w", (h, l)),
            ("enc.mu.b", (1, l)),
            ("enc.lv.w", (h, l)),
            ("enc.lv.b", (1, l)),
            ("dec.init.w", (l, h)),
            ("dec.init.b", (1, h)),
            ("dec.wx", (e, h)),
            ("dec.wz", (l, h)),
            ("dec.wh", (h, h)),
            ("dec.b", (1, h)),
            ("out.w", (h, v)),
            ("out.b", (1, v)),
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vocab_size < 5 {
            return Err("vocabulary needs at least one non-reserved token".into());
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err("seqvae dimensions must be positive".into());
        }
        if !(3..=crate::corpus::MAX_SUPPORTED_LEN).contains(&self.max_len) {
            return Err(format!("max_len must be in 3..={}", crate::corpus::MAX_SUPPORTED_LEN));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mu: Vec<f64>, logvar: Vec<f64>) -> Self {
        let logvar = logvar.into_iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        Self { mu, logvar }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `z = mu + exp(logvar / 2) * eta`, `eta ~ N(0, I)`.
pub fn sample_latent(p: &GaussianPosterior, rng: &mut SeededRng) -> Vec<f64> {
    p.mu.iter().zip(&p.logvar).map(|(&m, &lv)| m + (0.5 * lv).exp() * standard_normal(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Incremental decoder state: the hidden vector after consuming `prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub z: Vec<f64>,
    pub prefix: Vec<u32>,
    pub hidden: Vec<f64>,
}

/// One generated sentence with everything RL needs per emitted token.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub sequence: TokenSequence,
    /// Hidden state that produced the distribution for emitted token `t`.
    pub policy_states: Vec<Vec<f64>>,
    /// Hidden state after consuming emitted token `t`.
    pub value_states: Vec<Vec<f64>>,
    /// Distribution emitted token `t` was drawn from (blocked ids at 0).
    pub probs: Vec<Vec<f64>>,
    /// `true` where the token was forced (EOS at the length cap).
    pub forced: Vec<bool>,
}

impl Rollout {
    /// Emitted tokens (words then EOS).
    pub fn actions(&self) -> &[u32] {
        &self.sequence.ids()[1..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqVae {
    spec: SeqVaeSpec,
    params: ParamStore,
}

/// Teacher-forcing layout of a batch: step-major token ids and masks.
pub(crate) struct Batch {
    pub n: usize,
    pub enc_steps: Vec<Vec<usize>>,
    pub enc_masks: Vec<Matrix>,
    pub dec_inputs: Vec<Vec<usize>>,
    pub dec_targets: Vec<Vec<usize>>,
    pub dec_masks: Vec<Matrix>,
}

impl Batch {
    pub fn new(seqs: &[&TokenSequence]) -> Self {
        let n = seqs.len();
        let steps = seqs.iter().map(|s| s.len() - 1).max().unwrap_or(0);
        let mut enc_steps = Vec::with_capacity(steps);
        let mut enc_masks = Vec::with_capacity(steps);
        let mut dec_inputs = Vec::with_capacity(steps);
        let mut dec_targets = Vec::with_capacity(steps);
        let mut dec_masks = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut enc = Vec::with_capacity(n);
            let mut inp = Vec::with_capacity(n);
            let mut tgt = Vec::with_capacity(n);
            let mut mask = Matrix::zeros(n, 1);
            for (i, s) in seqs.iter().enumerate() {
                let ids = s.ids();
                if t + 1 < ids.len() {
                    enc.push(ids[t + 1] as usize);
                    inp.push(ids[t] as usize);
                    tgt.push(ids[t + 1] as usize);
                    mask[(i, 0)] = 1.0;
                } else {
                    enc.push(PAD as usize);
                    inp.push(PAD as usize);
                    tgt.push(PAD as usize);
                }
            }
            enc_steps.push(enc);
            enc_masks.push(mask.clone());
            dec_inputs.push(inp);
            dec_targets.push(tgt);
            dec_masks.push(mask);
        }
        Self { n, enc_steps, enc_masks, dec_inputs, dec_targets, dec_masks }
    }
}

/// Graph nodes of one loss evaluation.
pub(crate) struct LossNodes {
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
}

impl SeqVae {
    /// Glorot-initialized model.
    pub fn new(spec: SeqVaeSpec, seed: u64) -> Result<Self, VaeError> {
        spec.validate().map_err(DiffError::InvalidSpec)?;
        let mut init = Initializer::new(seed);
        let mut params = ParamStore::new(seed);
        for (name, (r, c)) in spec.layout() {
            let m = if name.ends_with(".b") {
                Matrix::zeros(r, c)
            } else if name == "embed" {
                init.uniform(r, c, 0.5)
            } else {
                init.glorot(r, c)
            };
            params.insert(name, m);
        }
        Ok(Self { spec, params })
    }

    /// Every parameter zero.
    pub fn zeros(spec: SeqVaeSpec) -> Result<Self, VaeError> {
        spec.validate().map_err(DiffError::InvalidSpec)?;
        let mut params = ParamStore::new(0);
        for (name, (r, c)) in spec.layout() {
            params.insert(name, Matrix::zeros(r, c));
        }
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: SeqVaeSpec, params: ParamStore) -> Result<Self, VaeError> {
        spec.validate().map_err(DiffError::InvalidSpec)?;
        for (name, shape) in spec.layout() {
            let m = params.require(name)?;
            if m.shape() != shape {
                return Err(DiffError::ShapeMismatch { layer: name.into(), expected: shape, got: m.shape() }.into());
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &SeqVaeSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn params_hash(&self) -> String {
        self.params.hash()
    }

    /// Hash of every parameter outside the policy projection.
    pub fn frozen_hash(&self) -> String {
        self.params.hash_filtered(|n| !POLICY_PARAMS.contains(&n))
    }

    fn p(&self, name: &str) -> &Matrix {
        self.params.get(name).expect("layout checked at construction")
    }

    // ---- plain (graph-free) inference path ----

    fn embed_rows(&self, ids: &[usize]) -> Matrix {
        self.p("embed").select_rows(ids)
    }

    pub fn encode_batch(&self, seqs: &[TokenSequence]) -> Vec<GaussianPosterior> {
        if seqs.is_empty() {
            return vec![];
        }
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let batch = Batch::new(&refs);
        let mut h = Matrix::zeros(batch.n, self.spec.hidden_dim);
        for (ids, mask) in batch.enc_steps.iter().zip(&batch.enc_masks) {
            let pre = self.embed_rows(ids).matmul(self.p("enc.wx")).zip_map(&h.matmul(self.p("enc.wh")), |a, b| a + b);
            let new = pre.add_row(self.p("enc.b")).map(f64::tanh);
            for i in 0..batch.n {
                if mask[(i, 0)] > 0.0 {
                    h.row_mut(i).copy_from_slice(new.row(i));
                }
            }
        }
        let mu = h.matmul(self.p("enc.mu.w")).add_row(self.p("enc.mu.b"));
        let lv = h.matmul(self.p("enc.lv.w")).add_row(self.p("enc.lv.b"));
        (0..batch.n).map(|i| GaussianPosterior::new(mu.row(i).to_vec(), lv.row(i).to_vec())).collect()
    }

    pub fn encode(&self, x: &TokenSequence) -> GaussianPosterior {
        self.encode_batch(std::slice::from_ref(x)).pop().expect("one sentence in, one posterior out")
    }

    fn dec_init(&self, z: &Matrix) -> Matrix {
        z.matmul(self.p("dec.init.w")).add_row(self.p("dec.init.b")).map(f64::tanh)
    }

    fn dec_step(&self, h: &Matrix, z_proj: &Matrix, tokens: &[usize]) -> Matrix {
        let mut pre = self.embed_rows(tokens).matmul(self.p("dec.wx"));
        pre.add_assign(z_proj);
        pre.add_assign(&h.matmul(self.p("dec.wh")));
        pre.add_row(self.p("dec.b")).map(f64::tanh)
    }

    /// Output logits for hidden states `h` (`n x hidden`).
    pub fn logits(&self, h: &Matrix) -> Matrix {
        h.matmul(self.p("out.w")).add_row(self.p("out.b"))
    }

    fn check_latent(&self, z: &[f64]) -> Result<(), VaeError> {
        if z.len() != self.spec.latent_dim {
            return Err(VaeError::LatentDim { expected: self.spec.latent_dim, got: z.len() });
        }
        Ok(())
    }

    /// Decoder state after consuming BOS.
    pub fn start(&self, z: &[f64]) -> Result<DecoderState, VaeError> {
        self.check_latent(z)?;
        let zm = Matrix::row_vector(z);
        let h0 = self.dec_init(&zm);
        let h1 = self.dec_step(&h0, &zm.matmul(self.p("dec.wz")), &[BOS as usize]);
        Ok(DecoderState { z: z.to_vec(), prefix: vec![BOS], hidden: h1.into_data() })
    }

    /// Consumes `token`.
    pub fn advance(&self, state: &mut DecoderState, token: u32) -> Result<(), VaeError> {
        if token as usize >= self.spec.vocab_size {
            return Err(VaeError::TokenOutOfRange(token));
        }
        let zm = Matrix::row_vector(&state.z);
        let h = Matrix::row_vector(&state.hidden);
        state.hidden = self.dec_step(&h, &zm.matmul(self.p("dec.wz")), &[token as usize]).into_data();
        state.prefix.push(token);
        Ok(())
    }

    /// Next-token distribution over the full vocabulary (strictly positive).
    pub fn decode_step(&self, state: &DecoderState) -> Result<Vec<f64>, VaeError> {
        if state.prefix.len() >= self.spec.max_len {
            return Err(VaeError::PrefixTooLong { len: state.prefix.len(), max: self.spec.max_len });
        }
        let l = self.logits(&Matrix::row_vector(&state.hidden));
        Ok(softmax(l.data()))
    }

    /// `-ln p(x | z)` under teacher forcing.
    pub fn nll(&self, x: &TokenSequence, z: &[f64]) -> Result<f64, VaeError> {
        let mut state = self.start(z)?;
        let mut total = 0.0;
        for &tok in &x.ids()[1..] {
            let p = self.decode_step(&state)?;
            total -= p[tok as usize].ln();
            self.advance(&mut state, tok)?;
        }
        Ok(total)
    }

    /// Generates one sentence from `z`.
    pub fn generate(
        &self,
        z: &[f64],
        mode: DecodeMode,
        temperature: f64,
        rng: &mut SeededRng,
    ) -> Result<TokenSequence, VaeError> {
        self.check_latent(z)?;
        let zs = Matrix::row_vector(z);
        Ok(self.rollout_batch(&zs, mode, temperature, rng)?.pop().expect("one latent").sequence)
    }

    /// Batched autoregressive generation, recording per-token states and
    /// distributions. PAD and BOS are never emitted; a sentence that reaches
    /// the length cap is closed with a forced EOS.
    pub fn rollout_batch(
        &self,
        latents: &Matrix,
        mode: DecodeMode,
        temperature: f64,
        rng: &mut SeededRng,
    ) -> Result<Vec<Rollout>, VaeError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(VaeError::InvalidTemperature(temperature));
        }
        if latents.cols() != self.spec.latent_dim {
            return Err(VaeError::LatentDim { expected: self.spec.latent_dim, got: latents.cols() });
        }
        let n = latents.rows();
        let z_proj = latents.matmul(self.p("dec.wz"));
        let h0 = self.dec_init(latents);
        let mut h = self.dec_step(&h0, &z_proj, &vec![BOS as usize; n]);
        let mut out: Vec<Rollout> = (0..n)
            .map(|_| Rollout {
                sequence: TokenSequence::from_words(&[]),
                policy_states: vec![],
                value_states: vec![],
                probs: vec![],
                forced: vec![],
            })
            .collect();
        let mut ids: Vec<Vec<u32>> = vec![vec![BOS]; n];
        let mut done = vec![false; n];
        let v = self.spec.vocab_size;
        while done.iter().any(|d| !d) {
            let logits = self.logits(&h);
            let mut next = vec![PAD as usize; n];
            for i in 0..n {
                if done[i] {
                    continue;
                }
                let forced = ids[i].len() + 1 >= self.spec.max_len;
                let mut dist = vec![0.0; v];
                let tok = if forced {
                    dist[EOS as usize] = 1.0;
                    EOS
                } else {
                    let scaled: Vec<f64> = logits.row(i).iter().map(|l| l / temperature).collect();
                    dist = masked_softmax(&scaled);
                    match mode {
                        DecodeMode::Greedy => argmax(&dist) as u32,
                        DecodeMode::Sample => sample_index(&dist, rng.random::<f64>()) as u32,
                    }
                };
                let r = &mut out[i];
                r.policy_states.push(h.row(i).to_vec());
                r.probs.push(dist);
                r.forced.push(forced);
                ids[i].push(tok);
                next[i] = tok as usize;
            }
            h_next_into(self, &mut h, &z_proj, &next, &done);
            for i in 0..n {
                if done[i] {
                    continue;
                }
                out[i].value_states.push(h.row(i).to_vec());
                if *ids[i].last().unwrap() == EOS {
                    done[i] = true;
                }
            }
        }
        for (r, seq) in out.iter_mut().zip(ids) {
            r.sequence = TokenSequence::new(seq, self.spec.max_len).expect("generation keeps sequence invariants");
        }
        Ok(out)
    }

    // ---- graph path (training) ----

    pub(crate) fn build_loss(
        &self,
        g: &mut Graph,
        vars: &std::collections::BTreeMap<String, Var>,
        batch: &Batch,
        noise: &Matrix,
        beta: f64,
    ) -> LossNodes {
        let p = |name: &str| vars[name];
        let n = batch.n;
        let hidden = self.spec.hidden_dim;

        let mut h = g.constant(Matrix::zeros(n, hidden));
        for (ids, mask) in batch.enc_steps.iter().zip(&batch.enc_masks) {
            let e = g.gather(p("embed"), Rc::new(ids.clone()));
            let a = g.matmul(e, p("enc.wx"));
            let b = g.matmul(h, p("enc.wh"));
            let s = g.add(a, b);
            let s = g.add_row(s, p("enc.b"));
            let new = g.tanh(s);
            let keep = Rc::new(broadcast_mask(mask, hidden));
            let hold = Rc::new(keep.map(|m| 1.0 - m));
            let new = g.mul_const(new, keep);
            let old = g.mul_const(h, hold);
            h = g.add(new, old);
        }
        let mu = g.matmul(h, p("enc.mu.w"));
        let mu = g.add_row(mu, p("enc.mu.b"));
        let lv = g.matmul(h, p("enc.lv.w"));
        let lv = g.add_row(lv, p("enc.lv.b"));
        let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);

        // reparameterized latent
        let half = g.scale(lv, 0.5);
        let std = g.exp(half);
        let eta = g.constant(noise.clone());
        let jitter = g.mul(std, eta);
        let z = g.add(mu, jitter);

        let h0 = g.matmul(z, p("dec.init.w"));
        let h0 = g.add_row(h0, p("dec.init.b"));
        let mut h = g.tanh(h0);
        let z_proj = g.matmul(z, p("dec.wz"));
        let mut step_losses = Vec::with_capacity(batch.dec_inputs.len());
        for ((inp, tgt), mask) in batch.dec_inputs.iter().zip(&batch.dec_targets).zip(&batch.dec_masks) {
            let e = g.gather(p("embed"), Rc::new(inp.clone()));
            let a = g.matmul(e, p("dec.wx"));
            let b = g.matmul(h, p("dec.wh"));
            let s = g.add(a, b);
            let s = g.add(s, z_proj);
            let s = g.add_row(s, p("dec.b"));
            h = g.tanh(s);
            let logits = g.matmul(h, p("out.w"));
            let logits = g.add_row(logits, p("out.b"));
            let xent = g.softmax_xent(logits, tgt);
            step_losses.push(g.mul_const(xent, Rc::new(mask.clone())));
        }
        let mut nll_rows = g.constant(Matrix::zeros(n, 1));
        for s in step_losses {
            nll_rows = g.add(nll_rows, s);
        }
        let nll_sum = g.sum_all(nll_rows);
        let nll = g.scale(nll_sum, 1.0 / n as f64);

        // 0.5 * sum(exp(lv) + mu^2 - 1 - lv) / n
        let ev = g.exp(lv);
        let mu2 = g.mul(mu, mu);
        let t = g.add(ev, mu2);
        let t = g.sub(t, lv);
        let t = g.add_scalar(t, -1.0);
        let kl_sum = g.sum_all(t);
        let kl = g.scale(kl_sum, 0.5 / n as f64);

        let loss = if beta == 0.0 {
            nll
        } else {
            let bk = g.scale(kl, beta);
            g.add(nll, bk)
        };
        LossNodes { loss, nll, kl }
    }

    /// Mean `nll + beta * kl` over `seqs` with fixed reparameterization
    /// noise, and its gradient.
    pub fn loss_and_grad(
        &self,
        seqs: &[&TokenSequence],
        noise: &Matrix,
        beta: f64,
    ) -> Result<(f64, f64, f64, GradientReport), VaeError> {
        let batch = Batch::new(seqs);
        let mut g = Graph::new();
        let vars = self.params.to_graph(&mut g);
        let nodes = self.build_loss(&mut g, &vars, &batch, noise, beta);
        let names: Vec<String> = vars.keys().cloned().collect();
        let list: Vec<Var> = vars.values().copied().collect();
        let grads = g.grad(nodes.loss, &list);
        let report = GradientReport::from_graph(&g, &names, &grads);
        Ok((g.scalar(nodes.loss), g.scalar(nodes.nll), g.scalar(nodes.kl), report))
    }

    /// Loss value only.
    pub fn loss(&self, seqs: &[&TokenSequence], noise: &Matrix, beta: f64) -> f64 {
        let batch = Batch::new(seqs);
        let mut g = Graph::new();
        let vars = self.params.to_graph(&mut g);
        let nodes = self.build_loss(&mut g, &vars, &batch, noise, beta);
        g.scalar(nodes.loss)
    }

    /// Standard-normal noise of the right shape for `loss_and_grad`.
    pub fn draw_noise(&self, n: usize, rng: &mut SeededRng) -> Matrix {
        normal_matrix(rng, n, self.spec.latent_dim)
    }

    /// Greedy reconstruction from the posterior mean.
    pub fn reconstruct(&self, x: &TokenSequence) -> Result<TokenSequence, VaeError> {
        let post = self.encode(x);
        let mut rng = crate::util::seeded(0);
        self.generate(&post.mu, DecodeMode::Greedy, 1.0, &mut rng)
    }
}

fn h_next_into(vae: &SeqVae, h: &mut Matrix, z_proj: &Matrix, next: &[usize], done: &[bool]) {
    let new = vae.dec_step(h, z_proj, next);
    for (i, &d) in done.iter().enumerate() {
        if !d {
            h.row_mut(i).copy_from_slice(new.row(i));
        }
    }
}

fn broadcast_mask(mask: &Matrix, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(mask.rows(), cols);
    for i in 0..mask.rows() {
        m.row_mut(i).fill(mask[(i, 0)]);
    }
    m
}

/// Softmax with PAD and BOS removed.
pub fn masked_softmax(logits: &[f64]) -> Vec<f64> {
    let mut l = logits.to_vec();
    for &b in &BLOCKED_TOKENS {
        if (b as usize) < l.len() {
            l[b as usize] = f64::NEG_INFINITY;
        }
    }
    softmax(&l)
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
