use super::*;
use crate::corpus::CorpusSplits;
use crate::diffcore::OptimizerConfig;
use crate::util::seeded;

fn tiny_spec() -> SeqVaeSpec {
    SeqVaeSpec { vocab_size: 7, embed_dim: 3, hidden_dim: 4, latent_dim: 2, max_len: 6 }
}

fn seq(words: &[u32]) -> TokenSequence {
    TokenSequence::from_words(words)
}

#[test]
fn zero_encoder_gives_standard_posterior() {
    let vae = SeqVae::zeros(tiny_spec()).unwrap();
    let p = vae.encode(&seq(&[4, 5, 6]));
    assert!(p.mu.iter().all(|&v| v == 0.0));
    assert!(p.logvar.iter().all(|&v| v == 0.0));
    // framing only is still a valid input
    let q = vae.encode(&seq(&[]));
    assert_eq!(q.dim(), 2);
}

#[test]
fn encode_is_deterministic() {
    let vae = SeqVae::new(tiny_spec(), 3).unwrap();
    let s = seq(&[4, 6, 5]);
    assert_eq!(vae.encode(&s), vae.encode(&s));
    // batched and single paths agree
    let batch = vae.encode_batch(&[seq(&[4]), s.clone()]);
    assert_eq!(batch[1], vae.encode(&s));
}

#[test]
fn logvar_is_clamped() {
    let p = GaussianPosterior::new(vec![0.0, 0.0], vec![-50.0, 50.0]);
    assert_eq!(p.logvar, vec![LOGVAR_MIN, LOGVAR_MAX]);
}

#[test]
fn sample_at_floor_variance_is_near_mean() {
    // the floor standard deviation is exp(-5) ~ 0.0067, so 0.03 is ~4.5 sigma
    let p = GaussianPosterior::new(vec![1.5, -2.0], vec![-10.0, -10.0]);
    let mut rng = seeded(9);
    let close = (0..1000)
        .filter(|_| sample_latent(&p, &mut rng).iter().zip(&p.mu).all(|(z, m)| (z - m).abs() < 0.03))
        .count();
    assert!(close >= 990, "{close}");
}

#[test]
fn standard_posterior_sample_mean() {
    let p = GaussianPosterior::new(vec![0.0; 3], vec![0.0; 3]);
    let mut rng = seeded(10);
    let mut sum = [0.0; 3];
    for _ in 0..10_000 {
        for (s, z) in sum.iter_mut().zip(sample_latent(&p, &mut rng)) {
            *s += z;
        }
    }
    assert!(sum.iter().all(|s| (s / 10_000.0).abs() < 0.05));
    let a = sample_latent(&p, &mut seeded(4));
    let b = sample_latent(&p, &mut seeded(4));
    assert_eq!(a, b);
}

#[test]
fn uniform_logits_give_max_entropy() {
    let vae = SeqVae::zeros(tiny_spec()).unwrap();
    let state = vae.start(&[0.3, -0.1]).unwrap();
    let p = vae.decode_step(&state).unwrap();
    let h: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
    assert!((h - 7f64.ln()).abs() < 1e-12);
}

#[test]
fn decode_step_is_distribution() {
    for seed in 0..20 {
        let vae = SeqVae::new(tiny_spec(), seed).unwrap();
        let mut state = vae.start(&[1.0, -1.0]).unwrap();
        vae.advance(&mut state, 4).unwrap();
        let p = vae.decode_step(&state).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&q| q > 0.0));
    }
}

#[test]
fn decode_step_rejects_full_prefix() {
    let vae = SeqVae::new(tiny_spec(), 1).unwrap();
    let mut state = vae.start(&[0.0, 0.0]).unwrap();
    for _ in 0..5 {
        vae.advance(&mut state, 4).unwrap();
    }
    assert!(matches!(vae.decode_step(&state), Err(VaeError::PrefixTooLong { len: 6, max: 6 })));
}

#[test]
fn uniform_model_nll_is_n_log_v() {
    let vae = SeqVae::zeros(tiny_spec()).unwrap();
    let s = seq(&[4, 5, 6]);
    // three words plus EOS are scored
    let expected = 4.0 * 7f64.ln();
    assert!((vae.nll(&s, &[0.2, 0.7]).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn confident_model_has_zero_nll() {
    // out.b strongly favours EOS; the sentence is just EOS
    let mut vae = SeqVae::zeros(tiny_spec()).unwrap();
    let mut b = Matrix::filled(1, 7, -1e3);
    b[(0, EOS as usize)] = 0.0;
    vae.params_mut().set("out.b", b).unwrap();
    assert!(vae.nll(&seq(&[]), &[0.0, 0.0]).unwrap().abs() < 1e-12);
}

#[test]
fn kl_closed_form_cases() {
    assert_eq!(kl(&GaussianPosterior::new(vec![0.0; 4], vec![0.0; 4])), 0.0);
    let p = GaussianPosterior::new(vec![1.0, 0.0, 0.0], vec![0.0; 3]);
    assert!((kl(&p) - 0.5).abs() < 1e-15);
}

/// Monte Carlo estimate of `E_q[ln q(z) - ln p(z)]`.
fn kl_monte_carlo(p: &GaussianPosterior, n: usize, rng: &mut SeededRng) -> f64 {
    let mut total = 0.0;
    for _ in 0..n {
        let z = sample_latent(p, rng);
        for ((&zi, &m), &lv) in z.iter().zip(&p.mu).zip(&p.logvar) {
            let lq = -0.5 * (lv + (zi - m).powi(2) / lv.exp());
            let lp = -0.5 * zi * zi;
            total += lq - lp;
        }
    }
    total / n as f64
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = seeded(21);
    let p = GaussianPosterior::new(vec![1.0, 0.0], vec![0.0, 0.0]);
    assert!((kl_monte_carlo(&p, 100_000, &mut rng) - 0.5).abs() < 0.02);
    for _ in 0..3 {
        let mu: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lv: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..0.5)).collect();
        let p = GaussianPosterior::new(mu, lv);
        let mc = kl_monte_carlo(&p, 100_000, &mut rng);
        assert!((mc - kl(&p)).abs() < 0.02, "{mc} vs {}", kl(&p));
    }
}

#[test]
fn kl_nonnegative_on_random_posteriors() {
    let mut rng = seeded(22);
    for _ in 0..1000 {
        let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let lv: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
        assert!(kl(&GaussianPosterior::new(mu, lv)) >= 0.0);
    }
}

#[test]
fn beta_zero_loss_is_nll() {
    let vae = SeqVae::new(tiny_spec(), 5).unwrap();
    let (a, b) = (seq(&[4, 5]), seq(&[6]));
    let noise = vae.draw_noise(2, &mut seeded(1));
    let (loss, nll, kl_val, _) = vae.loss_and_grad(&[&a, &b], &noise, 0.0).unwrap();
    assert!((loss - nll).abs() <= 1e-12);
    assert!(kl_val >= 0.0);
}

#[test]
fn graph_loss_matches_plain_path() {
    // with zero noise z = mu, so the graph nll equals the teacher-forced nll
    let vae = SeqVae::new(tiny_spec(), 8).unwrap();
    let seqs = [seq(&[4, 5, 6]), seq(&[5])];
    let refs: Vec<&TokenSequence> = seqs.iter().collect();
    let (_, nll, kl_val, _) = vae.loss_and_grad(&refs, &Matrix::zeros(2, 2), 1.0).unwrap();
    let posts = vae.encode_batch(&seqs);
    let plain_nll: f64 = seqs.iter().zip(&posts).map(|(s, p)| vae.nll(s, &p.mu).unwrap()).sum::<f64>() / 2.0;
    let plain_kl: f64 = posts.iter().map(kl).sum::<f64>() / 2.0;
    assert!((nll - plain_nll).abs() < 1e-10);
    assert!((kl_val - plain_kl).abs() < 1e-10);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let vae = SeqVae::new(tiny_spec(), 11).unwrap();
    let seqs = [seq(&[4, 5, 6, 4]), seq(&[6]), seq(&[5, 5])];
    let refs: Vec<&TokenSequence> = seqs.iter().collect();
    let noise = vae.draw_noise(3, &mut seeded(2));
    let beta = 0.7;
    let (_, _, _, report) = vae.loss_and_grad(&refs, &noise, beta).unwrap();
    let h = 1e-4;
    for (name, grad) in &report.params {
        for k in 0..grad.data().len() {
            let mut plus = vae.clone();
            plus.params_mut().get_mut(name).unwrap().data_mut()[k] += h;
            let mut minus = vae.clone();
            minus.params_mut().get_mut(name).unwrap().data_mut()[k] -= h;
            let fd = (plus.loss(&refs, &noise, beta) - minus.loss(&refs, &noise, beta)) / (2.0 * h);
            let an = grad.data()[k];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            assert!(err < 1e-4, "{name}[{k}]: analytic {an} vs fd {fd}");
        }
    }
}

fn two_sentence_splits() -> CorpusSplits {
    let train = vec![seq(&[4, 5, 6, 7]), seq(&[8, 7, 5])];
    CorpusSplits::new(train.clone(), train, vec![], "fixture").unwrap()
}

fn two_sentence_config(epochs: usize) -> VaeConfig {
    VaeConfig {
        embed_dim: 8,
        hidden_dim: 16,
        latent_dim: 4,
        max_len: 8,
        epochs,
        batch_size: 2,
        optimizer: OptimizerConfig::momentum(0.05).with_clip(5.0),
        beta_target: 0.0,
        annealing_ratio: 0.5,
        ratio_increase: 0.25,
    }
}

#[test]
fn two_sentences_reconstruct_exactly() {
    let splits = two_sentence_splits();
    let (vae, hist) = train_vae(&splits, 9, &two_sentence_config(500), 1, &mut seeded(1)).unwrap();
    assert_eq!(hist.step_losses.len(), 500);
    for s in &splits.train {
        assert_eq!(&vae.reconstruct(s).unwrap(), s);
    }
    assert_eq!(exact_reconstruction_rate(&vae, &splits.train), 1.0);
    // the two posteriors separate
    let a = vae.encode(&splits.train[0]).mu;
    let b = vae.encode(&splits.train[1]).mu;
    let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(d > 0.0);
    // and the latent matters to the decoder
    let s1 = vae.start(&a).unwrap();
    let s2 = vae.start(&b).unwrap();
    let (p1, p2) = (vae.decode_step(&s1).unwrap(), vae.decode_step(&s2).unwrap());
    let tv: f64 = 0.5 * p1.iter().zip(&p2).map(|(x, y)| (x - y).abs()).sum::<f64>();
    assert!(tv > 0.0);
}

#[test]
fn early_training_is_monotone() {
    let splits = two_sentence_splits();
    let (_, hist) = train_vae(&splits, 9, &two_sentence_config(5), 1, &mut seeded(1)).unwrap();
    let nll: Vec<f64> = hist.epochs.iter().map(|e| e.dev_nll.unwrap()).collect();
    assert!(nll.windows(2).all(|w| w[1] < w[0]), "{nll:?}");
    let acc: Vec<f64> = hist.epochs.iter().map(|e| e.dev_token_accuracy.unwrap()).collect();
    assert!(acc.windows(2).all(|w| w[1] >= w[0]), "{acc:?}");
}

#[test]
fn training_is_reproducible() {
    let splits = two_sentence_splits();
    let cfg = two_sentence_config(10);
    let (a, ha) = train_vae(&splits, 9, &cfg, 3, &mut seeded(3)).unwrap();
    let (b, hb) = train_vae(&splits, 9, &cfg, 3, &mut seeded(3)).unwrap();
    assert_eq!(a.params_hash(), b.params_hash());
    assert_eq!(ha, hb);
}

#[test]
fn anneal_schedule_endpoints() {
    let s = AnnealSchedule { beta_target: 0.8, annealing_ratio: 0.5, ratio_increase: 0.25, total_steps: 100 };
    assert_eq!(s.beta(0), 0.0);
    assert_eq!(s.beta(50), 0.8);
    assert_eq!(s.beta(100), 0.8);
    let mut prev = 0.0;
    for t in 0..=100 {
        let b = s.beta(t);
        assert!(b >= prev && (0.0..=0.8).contains(&b));
        prev = b;
    }
}

#[test]
fn greedy_is_deterministic_and_valid() {
    let vae = SeqVae::new(tiny_spec(), 13).unwrap();
    let z = [0.4, -1.2];
    let a = vae.generate(&z, DecodeMode::Greedy, 1.0, &mut seeded(1)).unwrap();
    let b = vae.generate(&z, DecodeMode::Greedy, 1.0, &mut seeded(2)).unwrap();
    assert_eq!(a, b);
    let mut rng = seeded(3);
    for _ in 0..50 {
        let z = [standard_normal(&mut rng), standard_normal(&mut rng)];
        let s = vae.generate(&z, DecodeMode::Sample, 1.5, &mut rng).unwrap();
        assert_eq!(s.ids()[0], BOS);
        assert_eq!(*s.ids().last().unwrap(), EOS);
        assert!(s.len() <= 6);
        assert!(s.words().iter().all(|&t| t != PAD && t != BOS && t != EOS));
    }
    assert!(matches!(vae.generate(&z, DecodeMode::Sample, 0.0, &mut rng), Err(VaeError::InvalidTemperature(_))));
}

#[test]
fn cold_sampling_matches_greedy() {
    // sharpen the freshly initialized output layer so argmax gaps are not
    // vanishingly small
    let mut vae = SeqVae::new(tiny_spec(), 17).unwrap();
    let w = vae.params().get("out.w").unwrap().map(|v| 10.0 * v);
    vae.params_mut().set("out.w", w).unwrap();
    let latents = normal_matrix(&mut seeded(5), 100, 2);
    let greedy = vae.rollout_batch(&latents, DecodeMode::Greedy, 1.0, &mut seeded(0)).unwrap();
    let cold = vae.rollout_batch(&latents, DecodeMode::Sample, 0.01, &mut seeded(6)).unwrap();
    let same = greedy.iter().zip(&cold).filter(|(a, b)| a.sequence == b.sequence).count();
    assert!(same >= 99, "{same}");
}

#[test]
fn rollout_records_align_with_actions() {
    let vae = SeqVae::new(tiny_spec(), 19).unwrap();
    let latents = normal_matrix(&mut seeded(7), 8, 2);
    for r in vae.rollout_batch(&latents, DecodeMode::Sample, 1.0, &mut seeded(8)).unwrap() {
        let n = r.actions().len();
        assert_eq!(r.policy_states.len(), n);
        assert_eq!(r.value_states.len(), n);
        assert_eq!(r.probs.len(), n);
        assert_eq!(r.forced.len(), n);
        for (p, &a) in r.probs.iter().zip(r.actions()) {
            assert!(p[a as usize] > 0.0);
            assert_eq!(p[PAD as usize], 0.0);
            assert_eq!(p[BOS as usize], 0.0);
        }
    }
    // the single-step decoder path agrees with the batched one
    let z = latents.row(0).to_vec();
    let r = &vae.rollout_batch(&Matrix::row_vector(&z), DecodeMode::Greedy, 1.0, &mut seeded(0)).unwrap()[0];
    let mut state = vae.start(&z).unwrap();
    for (t, &a) in r.actions().iter().enumerate() {
        assert!(state.hidden.iter().zip(&r.policy_states[t]).all(|(x, y)| (x - y).abs() < 1e-12));
        vae.advance(&mut state, a).unwrap();
        assert!(state.hidden.iter().zip(&r.value_states[t]).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
