use super::*;
use crate::diffcore::{Activation, OptimizerConfig};
use crate::latentgan::GanArchitecture;
use crate::seqvae::SeqVaeSpec;
use crate::util::{normal_matrix, seeded};

fn seq(words: &[u32]) -> TokenSequence {
    TokenSequence::from_words(words)
}

#[test]
fn external_reward_cases() {
    let refs = BleuReference::new(&[vec![4u32, 5, 6], vec![7, 8]]);
    assert_eq!(external_reward(&seq(&[4, 5, 6]), &refs).unwrap(), 1.0);
    assert_eq!(external_reward(&seq(&[9, 10]), &refs).unwrap(), 0.0);
    // "a a b" vs "a b c": clipped unigrams 2/3, equal length so no penalty
    let single = BleuReference::new(&[vec![1u32, 2, 3]]);
    let r = external_reward(&seq(&[1, 1, 2]), &single).unwrap();
    assert!((r - 2.0 / 3.0).abs() < 1e-15);
    let empty: BleuReference<u32> = BleuReference::new::<Vec<u32>>(&[]);
    assert!(matches!(external_reward(&seq(&[4]), &empty), Err(RlError::EmptyReferences)));
}

#[test]
fn entropy_cases() {
    assert_eq!(token_entropy(&[0.0, 1.0, 0.0]), 0.0);
    let direct = -4.0 * (0.25f64 * 0.25f64.ln());
    assert!((token_entropy(&[0.25; 4]) - direct).abs() < 1e-15);
    assert!((token_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
    let mut rng = seeded(1);
    let uniform = token_entropy(&[0.125; 8]);
    for _ in 0..200 {
        let raw: Vec<f64> = (0..8).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        assert!(token_entropy(&p) <= uniform + 1e-12);
    }
}

#[test]
fn intrinsic_reward_cases() {
    assert_eq!(intrinsic_reward(1.0), 0.0);
    assert_eq!(intrinsic_reward(3.7), 0.0);
    assert!((intrinsic_reward(0.5) - -std::f64::consts::LN_2).abs() < 1e-12);
    assert!((intrinsic_reward(0.05) - (-1.609_437_912_434_100_3)).abs() < 1e-12);
    assert_eq!(intrinsic_reward(0.0), 0.2f64.ln());
}

fn trace(rewards: Vec<f64>, intrinsic: Vec<f64>, gamma: f64) -> RewardTrace {
    let n = rewards.len();
    RewardTrace { rewards, external: 0.0, entropies: vec![1.0; n], intrinsic, gamma }
}

#[test]
fn returns_examples() {
    let t = trace(vec![0.0, 0.0, 1.0], vec![0.0; 3], 1.0);
    assert_eq!(returns(&t, ReturnsMode::PastInclusive), vec![0.0, 0.0, 1.0]);
    let t = trace(vec![1.0, 1.0], vec![0.0; 2], 0.5);
    assert_eq!(returns(&t, ReturnsMode::PastInclusive), vec![1.0, 1.5]);
    assert_eq!(returns(&t, ReturnsMode::ToGo), vec![1.5, 1.0]);
    let t = trace(vec![1.0, 1.0], vec![-0.5, -1.0], 1.0);
    assert_eq!(returns(&t, ReturnsMode::PastInclusive), vec![0.5, 1.0]);
}

fn toy_policy() -> PolicySlice {
    PolicySlice {
        weight: Matrix::from_rows(&[vec![0.1, -0.2, 0.3], vec![0.0, 0.5, -0.4]]),
        bias: Matrix::row_vector(&[0.05, 0.0, -0.1]),
        blocked: vec![],
    }
}

#[test]
fn zero_returns_leave_policy_unchanged() {
    let mut p = toy_policy();
    let before = p.clone();
    let batch = vec![Transition { state: vec![1.0, -1.0], action: 2, ret: 0.0 }];
    assert!(pg_step(&mut p, &batch, 1, 0.1));
    assert_eq!(p, before);
}

#[test]
fn single_token_policy_has_zero_gradient() {
    let mut p = PolicySlice { weight: Matrix::from_rows(&[vec![0.7], vec![-0.3]]), bias: Matrix::zeros(1, 1), blocked: vec![] };
    assert_eq!(p.log_prob(&[0.4, 2.0], 0), 0.0);
    let before = p.clone();
    pg_step(&mut p, &[Transition { state: vec![0.4, 2.0], action: 0, ret: 3.0 }], 1, 1.0);
    assert_eq!(p, before);
}

#[test]
fn positive_return_raises_action_probability() {
    let mut p = toy_policy();
    let s = vec![0.3, 0.8];
    let before = p.probs(&s)[1];
    pg_step(&mut p, &[Transition { state: s.clone(), action: 1, ret: 1.0 }], 1, 0.5);
    assert!(p.probs(&s)[1] > before);
}

#[test]
fn blocked_tokens_get_no_mass_and_no_gradient() {
    let mut p = toy_policy();
    p.blocked = vec![0];
    let s = vec![0.3, 0.8];
    assert_eq!(p.probs(&s)[0], 0.0);
    let (dw, db) = p.surrogate_gradient(&[Transition { state: s, action: 2, ret: 1.0 }], 1.0);
    assert_eq!(db[(0, 0)], 0.0);
    assert_eq!(dw[(0, 0)], 0.0);
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let p = toy_policy();
    let batch = vec![
        Transition { state: vec![0.3, 0.8], action: 1, ret: 1.5 },
        Transition { state: vec![-1.0, 0.2], action: 0, ret: -0.7 },
        Transition { state: vec![0.5, 0.5], action: 2, ret: 0.3 },
    ];
    let objective = |q: &PolicySlice| batch.iter().map(|t| t.ret * q.log_prob(&t.state, t.action)).sum::<f64>() / 2.0;
    let (dw, db) = p.surrogate_gradient(&batch, 2.0);
    let h = 1e-5;
    for k in 0..6 {
        let mut a = p.clone();
        a.weight.data_mut()[k] += h;
        let mut b = p.clone();
        b.weight.data_mut()[k] -= h;
        let fd = (objective(&a) - objective(&b)) / (2.0 * h);
        assert!((fd - dw.data()[k]).abs() / fd.abs().max(1e-3) < 1e-4, "w[{k}]");
    }
    for k in 0..3 {
        let mut a = p.clone();
        a.bias.data_mut()[k] += h;
        let mut b = p.clone();
        b.bias.data_mut()[k] -= h;
        let fd = (objective(&a) - objective(&b)) / (2.0 * h);
        assert!((fd - db.data()[k]).abs() / fd.abs().max(1e-3) < 1e-4, "b[{k}]");
    }
}

fn vh_config(epochs: usize, lr: f64) -> ValueHeadConfig {
    ValueHeadConfig {
        hidden_dims: vec![8],
        activation: Activation::Tanh,
        epochs,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(lr, 0.9, 0.999),
    }
}

#[test]
fn value_head_learns_zero_rewards() {
    let mut rng = seeded(3);
    let samples: Vec<ValueSample> =
        (0..32).map(|i| ValueSample { states: normal_matrix(&mut rng, 2 + i % 4, 3), reward: 0.0 }).collect();
    let vh = ValueHead::new(3, &vh_config(1, 1e-3), 4).unwrap();
    // coarse then fine: L1 loss keeps Adam oscillating at roughly the step size
    let (vh, _) = pretrain_value_head(vh, &samples, &vh_config(300, 1e-2), &mut rng).unwrap();
    let (vh, _) = pretrain_value_head(vh, &samples, &vh_config(300, 1e-3), &mut rng).unwrap();
    let res = value_residuals(&vh, &samples).unwrap();
    let mae = res.iter().map(|r| r.abs()).sum::<f64>() / res.len() as f64;
    assert!(mae < 0.01, "{mae}");
}

#[test]
fn value_head_splits_constant_reward_evenly() {
    // identical hidden states everywhere: the optimum gives r / n per token
    let n = 4;
    let r = 0.8;
    let state = vec![0.5, -0.25, 1.0];
    let states = Matrix::from_rows(&vec![state.clone(); n]);
    let samples = vec![ValueSample { states, reward: r }; 16];
    let vh = ValueHead::new(3, &vh_config(1, 1e-3), 5).unwrap();
    let mut rng = seeded(1);
    let (vh, _) = pretrain_value_head(vh, &samples, &vh_config(400, 1e-2), &mut rng).unwrap();
    let (vh, _) = pretrain_value_head(vh, &samples, &vh_config(400, 1e-3), &mut rng).unwrap();
    let per = vh.per_token(&Matrix::row_vector(&state)).unwrap()[0];
    assert!((per - r / n as f64).abs() < 0.01, "{per}");
}

#[test]
fn residuals_are_additive() {
    let mut rng = seeded(6);
    let vh = ValueHead::new(3, &vh_config(1, 1e-3), 7).unwrap();
    let samples: Vec<ValueSample> =
        (0..5).map(|i| ValueSample { states: normal_matrix(&mut rng, 1 + i, 3), reward: 0.1 * i as f64 }).collect();
    let res = value_residuals(&vh, &samples).unwrap();
    for (s, r) in samples.iter().zip(res) {
        let direct: f64 = vh.per_token(&s.states).unwrap().iter().sum::<f64>() - s.reward;
        assert_eq!(direct, r);
    }
}

fn toy_models() -> (SeqVae, GanPair) {
    let spec = SeqVaeSpec { vocab_size: 9, embed_dim: 4, hidden_dim: 6, latent_dim: 3, max_len: 7 };
    let vae = SeqVae::new(spec, 2).unwrap();
    let arch = GanArchitecture { noise_dim: 3, hidden_dim: 4, blocks: 1, activation: Activation::Tanh, gp_lambda: 10.0 };
    (vae, GanPair::new(&arch, 3, 3).unwrap())
}

fn rl_config(epochs: usize) -> RlConfig {
    RlConfig {
        epochs,
        batch_size: 8,
        learning_rate: 0.05,
        gamma: 1.0,
        returns_mode: ReturnsMode::PastInclusive,
        normalize_entropy: false,
        baseline: false,
        value_head_steps: 0,
        value_head_learning_rate: 1e-3,
    }
}

#[test]
fn zero_epochs_is_identity() {
    let (vae, gan) = toy_models();
    let vh = ValueHead::new(6, &vh_config(1, 1e-3), 1).unwrap();
    let refs = BleuReference::new(&[vec![4u32, 5]]);
    let (out, hist) = finetune_rl(&vae, &vh, &gan, &refs, &rl_config(0), &mut seeded(1), |_, _| {}).unwrap();
    assert_eq!(out.params_hash(), vae.params_hash());
    assert!(hist.is_empty());
}

#[test]
fn finetuning_only_moves_the_policy() {
    let (vae, gan) = toy_models();
    let vh = ValueHead::new(6, &vh_config(1, 1e-3), 1).unwrap();
    let refs = BleuReference::new(&[vec![4u32, 5, 6], vec![7, 8]]);
    let mut seen = 0;
    let (out, hist) =
        finetune_rl(&vae, &vh, &gan, &refs, &rl_config(5), &mut seeded(1), |_, _| seen += 1).unwrap();
    assert_eq!(seen, 5);
    assert_eq!(hist.len(), 5);
    assert_eq!(out.frozen_hash(), vae.frozen_hash());
    assert_ne!(out.params_hash(), vae.params_hash());
    for rec in &hist {
        assert!((0.0..=1.0).contains(&rec.mean_external));
        assert!(rec.mean_intrinsic >= 0.2f64.ln() && rec.mean_intrinsic <= 0.0);
    }
}

#[test]
fn finetuning_is_reproducible() {
    let (vae, gan) = toy_models();
    let vh = ValueHead::new(6, &vh_config(1, 1e-3), 1).unwrap();
    let refs = BleuReference::new(&[vec![4u32, 5, 6]]);
    let a = finetune_rl(&vae, &vh, &gan, &refs, &rl_config(3), &mut seeded(9), |_, _| {}).unwrap();
    let b = finetune_rl(&vae, &vh, &gan, &refs, &rl_config(3), &mut seeded(9), |_, _| {}).unwrap();
    assert_eq!(a.0.params_hash(), b.0.params_hash());
    assert_eq!(a.1, b.1);
}

#[test]
fn forced_steps_are_not_transitions() {
    let (vae, _) = toy_models();
    let vh = ValueHead::new(6, &vh_config(1, 1e-3), 1).unwrap();
    let refs = BleuReference::new(&[vec![4u32, 5, 6]]);
    let latents = normal_matrix(&mut seeded(2), 16, 3);
    let batch = score_rollouts(&vae, &vh, &latents, &refs, &rl_config(1), &mut seeded(3)).unwrap();
    let decisions: usize = batch.rollouts.iter().map(|r| r.forced.iter().filter(|f| !**f).count()).sum();
    assert_eq!(transitions(&batch, ReturnsMode::PastInclusive).len(), decisions);
    for (r, t) in batch.rollouts.iter().zip(&batch.traces) {
        assert_eq!(t.len(), r.actions().len());
    }
}

#[test]
fn rule_of_thumb_warns_for_small_rewards() {
    let t = RewardTrace { rewards: vec![], external: 0.9, entropies: vec![], intrinsic: vec![], gamma: 1.0 };
    assert!(rule_of_thumb_check(std::slice::from_ref(&t)));
    let big = RewardTrace { external: 2.0, ..t };
    assert!(!rule_of_thumb_check(&[big]));
}
