//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances and runtime budgets are fixed here.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use ltg_core::corpus::TokenSequence;
use ltg_core::diffcore::{Activation, GradientReport, Matrix, OptimizerConfig, ParamStore};
use ltg_core::evalmetrics::{bbleu, bleu, embed, frechet, BleuReference, EmbeddingSet, NgramCounts};
use ltg_core::latentgan::{
    critic_loss, generator_loss, lambda_schedule, replay_tape, Decision, GanArchitecture, GanPair, TapeStep,
    DEFAULT_RATIO_EPS,
};
use ltg_core::rlfinetune::{intrinsic_reward, value_loss, PolicySlice, Transition, ValueHead, ValueHeadConfig, ValueSample};
use ltg_core::seqvae::{SeqVae, SeqVaeSpec};
use ltg_core::util::{derive_seed, normal_matrix, seeded, standard_normal, SeededRng};
use ltg_pipeline::ablation::{ablation, AblationReport};
use ltg_pipeline::artifacts::{self, Meta};
use ltg_pipeline::stages::{self, METRICS_FILE};
use ltg_pipeline::{Experiment, RunConfig};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient correctness", budget: secs(60), run: gradients },
        Criterion { id: 2, name: "BLEU oracle equivalence", budget: secs(30), run: bleu_oracle },
        Criterion { id: 3, name: "scheduler golden tape", budget: secs(10), run: scheduler },
        Criterion { id: 4, name: "intrinsic reward arithmetic", budget: secs(10), run: intrinsic },
        Criterion { id: 5, name: "value-head decomposition", budget: secs(300), run: value_head },
        Criterion { id: 6, name: "Frechet sanity", budget: secs(30), run: frechet_sanity },
        Criterion { id: 7, name: "FID length bias", budget: secs(120), run: fid_bias },
        Criterion { id: 8, name: "RL ablation direction", budget: secs(1800), run: ablation_direction },
        Criterion { id: 9, name: "determinism", budget: secs(240), run: determinism },
        Criterion { id: 10, name: "frozen decoder parameters", budget: secs(240), run: frozen },
    ];
    let only: Vec<usize> = std::env::var("LTG_ACCEPTANCE")
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| Err(panic_text(p)));
        let took = t.elapsed();
        let outcome = match outcome {
            Ok(_) if took > c.budget => Err(format!("took {:.1}s, budget {}s", took.as_secs_f64(), c.budget.as_secs())),
            o => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {}: {detail} [{:.1}s]", c.id, c.name, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- 1: gradients --------------------------------------------------------

const FD_STEP: f64 = 1e-4;

/// Largest relative error between `grads` and central differences of `f`
/// over every parameter coordinate.
fn fd_error(params: &ParamStore, grads: &GradientReport, mut f: impl FnMut(&ParamStore) -> f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (name, g) in &grads.params {
        for k in 0..g.data().len() {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[k] += FD_STEP;
            let up = f(&p);
            p.get_mut(name).unwrap().data_mut()[k] -= 2.0 * FD_STEP;
            let down = f(&p);
            let fd = (up - down) / (2.0 * FD_STEP);
            let an = g.data()[k];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            if err > worst.0 {
                worst = (err, format!("{name}[{k}]"));
            }
        }
    }
    worst
}

fn random_words(rng: &mut SeededRng, vocab: u32, max: usize) -> Vec<u32> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| rng.random_range(4..vocab)).collect()
}

fn gradients() -> Outcome {
    let mut worst: BTreeMap<&str, (f64, String)> = BTreeMap::new();
    let mut note = |loss: &'static str, e: (f64, String), seed: u64| {
        let slot = worst.entry(loss).or_insert((0.0, String::new()));
        if e.0 >= slot.0 {
            *slot = (e.0, format!("{} seed {seed}", e.1));
        }
    };
    for seed in 0..100u64 {
        let mut rng = seeded(derive_seed(seed, "fd"));

        let spec = SeqVaeSpec { vocab_size: 8, embed_dim: 3, hidden_dim: 4, latent_dim: 2, max_len: 6 };
        let vae = SeqVae::new(spec, seed).unwrap();
        let seqs: Vec<TokenSequence> = (0..3).map(|_| TokenSequence::from_words(&random_words(&mut rng, 8, 4))).collect();
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let noise = vae.draw_noise(3, &mut rng);
        let beta = rng.random_range(0.0..1.0);
        let (_, _, _, g) = vae.loss_and_grad(&refs, &noise, beta).unwrap();
        let e = fd_error(vae.params(), &g, |p| {
            SeqVae::from_parts(vae.spec().clone(), p.clone()).unwrap().loss(&refs, &noise, beta)
        });
        note("vae", e, seed);

        for (label, lambda) in [("critic", 0.0), ("critic+gp", 10.0)] {
            let arch = GanArchitecture { noise_dim: 2, hidden_dim: 4, blocks: 1, activation: Activation::Tanh, gp_lambda: lambda };
            let pair = GanPair::new(&arch, 3, seed).unwrap();
            let real = normal_matrix(&mut rng, 4, 3);
            let fake = normal_matrix(&mut rng, 4, 3);
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let cl = critic_loss(&pair, &real, &fake, &u).unwrap();
            let e = fd_error(&pair.critic_params, &cl.grads, |p| {
                let mut q = pair.clone();
                q.critic_params = p.clone();
                critic_loss(&q, &real, &fake, &u).unwrap().loss
            });
            note(label, e, seed);
        }

        let arch = GanArchitecture { noise_dim: 2, hidden_dim: 4, blocks: 1, activation: Activation::Tanh, gp_lambda: 10.0 };
        let pair = GanPair::new(&arch, 3, seed).unwrap();
        let z = pair.draw_noise(5, &mut rng);
        let (_, g) = generator_loss(&pair, &z).unwrap();
        let e = fd_error(&pair.generator_params, &g, |p| {
            let mut q = pair.clone();
            q.generator_params = p.clone();
            generator_loss(&q, &z).unwrap().0
        });
        note("generator", e, seed);

        let head = ValueHeadConfig {
            hidden_dims: vec![3],
            activation: Activation::Tanh,
            epochs: 1,
            batch_size: 1,
            optimizer: OptimizerConfig::adam(1e-4, 0.9, 0.999),
        };
        let vh = ValueHead::new(4, &head, seed).unwrap();
        let samples: Vec<ValueSample> = (0..3)
            .map(|_| {
                let rows = rng.random_range(1..5);
                ValueSample { states: normal_matrix(&mut rng, rows, 4), reward: rng.random_range(0.0..1.0) }
            })
            .collect();
        let batch: Vec<&ValueSample> = samples.iter().collect();
        let (_, g) = value_loss(&vh, &batch).unwrap();
        let e = fd_error(&vh.params, &g, |p| {
            value_loss(&ValueHead::from_parts(vh.spec.clone(), p.clone()).unwrap(), &batch).unwrap().0
        });
        note("value", e, seed);

        let e = policy_fd_error(&mut rng);
        note("policy", e, seed);
    }
    let mut detail = Vec::new();
    for (loss, (err, at)) in &worst {
        let tol = if *loss == "critic+gp" { 1e-3 } else { 1e-4 };
        check(*err < tol, || format!("{loss}: relative error {err:.2e} at {at} exceeds {tol:e}"))?;
        detail.push(format!("{loss} {err:.1e}"));
    }
    Ok(format!("100 seeds, worst relative error: {}", detail.join(", ")))
}

/// Policy-gradient surrogate `sum ret * ln pi(a | s) / n` against its
/// analytic gradient.
fn policy_fd_error(rng: &mut SeededRng) -> (f64, String) {
    let (h, v) = (4, 6);
    let policy = PolicySlice {
        weight: normal_matrix(rng, h, v),
        bias: normal_matrix(rng, 1, v),
        blocked: vec![0, 1],
    };
    let batch: Vec<Transition> = (0..5)
        .map(|_| Transition {
            state: (0..h).map(|_| standard_normal(rng)).collect(),
            action: rng.random_range(2..v),
            ret: rng.random_range(-1.0..1.0),
        })
        .collect();
    let objective = |p: &PolicySlice| batch.iter().map(|t| t.ret * p.log_prob(&t.state, t.action)).sum::<f64>() / 2.0;
    let (dw, db) = policy.surrogate_gradient(&batch, 2.0);
    let mut params = ParamStore::new(0);
    params.insert("w", policy.weight.clone());
    params.insert("b", policy.bias.clone());
    let mut grads = GradientReport::zeros_like(&params);
    grads.params.insert("w".into(), dw);
    grads.params.insert("b".into(), db);
    fd_error(&params, &grads, |p| {
        let q = PolicySlice { weight: p.get("w").unwrap().clone(), bias: p.get("b").unwrap().clone(), blocked: vec![0, 1] };
        objective(&q)
    })
}

// ---- 2: BLEU oracle -------------------------------------------------------

/// Exact rational precision `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ratio {
    num: u64,
    den: u64,
}

/// Independent sentence BLEU: n-grams enumerated by brute force, clipped
/// precisions kept as exact rationals until the final float.
fn oracle_sentence(hyp: &[u32], refs: &[Vec<u32>], n: usize) -> (Vec<Ratio>, usize, f64) {
    fn grams(s: &[u32], k: usize) -> Vec<Vec<u32>> {
        if s.len() < k {
            return vec![];
        }
        (0..=s.len() - k).map(|i| s[i..i + k].to_vec()).collect()
    }
    fn count(list: &[Vec<u32>], g: &[u32]) -> u64 {
        list.iter().filter(|x| x.as_slice() == g).count() as u64
    }
    let mut ratios = Vec::new();
    for k in 1..=n {
        let hg = grams(hyp, k);
        let mut seen: Vec<Vec<u32>> = Vec::new();
        let mut matched = 0;
        for g in &hg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            let max_ref = refs.iter().map(|r| count(&grams(r, k), g)).max().unwrap_or(0);
            matched += count(&hg, g).min(max_ref);
        }
        ratios.push(Ratio { num: matched, den: hg.len() as u64 });
    }
    let h = hyp.len();
    let r = refs.iter().map(|r| r.len()).min_by_key(|&l| (l.abs_diff(h), l)).unwrap();
    if h == 0 || ratios[0].num == 0 {
        return (ratios, r, 0.0);
    }
    let mut prod = 1.0;
    for (k, q) in ratios.iter().enumerate() {
        prod *= if k > 0 && q.num == 0 { 1.0 / (q.den as f64 + 1.0) } else { q.num as f64 / q.den as f64 };
    }
    let bp = if h >= r { 1.0 } else { (1.0 - r as f64 / h as f64).exp() };
    (ratios, r, bp * prod.powf(1.0 / n as f64))
}

fn oracle_bleu(hyps: &[Vec<u32>], refs: &[Vec<u32>], n: usize) -> f64 {
    hyps.iter().map(|h| oracle_sentence(h, refs, n).2).sum::<f64>() / hyps.len() as f64
}

fn micro_corpus(rng: &mut SeededRng, vocab: u32) -> Vec<Vec<u32>> {
    let n = rng.random_range(1..=5);
    (0..n).map(|_| (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..vocab)).collect()).collect()
}

fn bleu_oracle() -> Outcome {
    let mut rng = seeded(derive_seed(0, "bleu-oracle"));
    let mut worst: f64 = 0.0;
    let mut sentences = 0;
    for case in 0..1000 {
        let vocab = rng.random_range(1..=10);
        let hyps = micro_corpus(&mut rng, vocab);
        let refs = micro_corpus(&mut rng, vocab);
        let n = rng.random_range(1..=4);
        let index = BleuReference::new(&refs);
        for h in &hyps {
            let (ratios, r, _) = oracle_sentence(h, &refs, n);
            let counts: Vec<Ratio> =
                index.clipped_counts(h, n).iter().map(|&NgramCounts { matched, total }| Ratio { num: matched, den: total }).collect();
            check(counts == ratios, || format!("case {case}: clipped counts {counts:?} vs oracle {ratios:?}"))?;
            if !h.is_empty() {
                check(index.closest_length(h.len()) == r, || format!("case {case}: closest reference length differs"))?;
            }
            sentences += 1;
        }
        for (got, want) in [
            (bleu(&hyps, &refs, n), oracle_bleu(&hyps, &refs, n)),
            (bbleu(&hyps, &refs, n), oracle_bleu(&hyps, &refs, n)),
            (bbleu(&refs, &hyps, n), oracle_bleu(&refs, &hyps, n)),
        ] {
            worst = worst.max((got - want).abs());
            check((got - want).abs() <= 1e-12, || format!("case {case}: bleu {got} vs oracle {want}"))?;
        }
    }
    Ok(format!("1000 corpora, {sentences} hypotheses, counts exact, max float difference {worst:.1e}"))
}

// ---- 3: scheduler ---------------------------------------------------------

const TAPE: &str = include_str!("../../core/tests/data/scheduler_tape.csv");

fn scheduler() -> Outcome {
    let mut steps = Vec::new();
    let mut expected = Vec::new();
    for line in TAPE.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let p = |i: usize| f[i].parse::<f64>().map_err(|e| e.to_string());
        steps.push(TapeStep { loss_g: p(1)?, loss_d: p(2)?, lambda: p(3)? });
        expected.push(match f[4] {
            "D" => Decision::UpdateDiscriminator,
            "G" => Decision::UpdateGenerator,
            other => return Err(format!("bad decision {other}")),
        });
    }
    check(steps.len() == 200, || format!("tape has {} steps", steps.len()))?;
    let got = replay_tape(&steps, DEFAULT_RATIO_EPS);
    if let Some(i) = got.iter().zip(&expected).position(|(g, e)| g != e) {
        return Err(format!("step {i}: {:?} vs golden {:?}", got[i], expected[i]));
    }
    for total in [1, 2, 3, 10, 50, 1000] {
        for lam0 in [0.0, 0.25, 0.5, 0.9] {
            check(lambda_schedule(0, total, lam0) == if total <= 1 { 1.0 } else { lam0 }, || {
                format!("lambda at epoch 0 of {total} is {}", lambda_schedule(0, total, lam0))
            })?;
            check(lambda_schedule(total - 1, total, lam0) == 1.0, || format!("lambda at final epoch of {total} is not 1"))?;
        }
    }
    let g = expected.iter().filter(|d| **d == Decision::UpdateGenerator).count();
    Ok(format!("200/200 decisions match ({g} G, {} D); lambda endpoints exact", 200 - g))
}

// ---- 4: intrinsic reward --------------------------------------------------

fn intrinsic() -> Outcome {
    let lo = 0.2f64.ln();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let h = 3.0 * i as f64 / 999.0;
        let want = if h < 0.2 {
            lo
        } else if h > 1.0 {
            0.0
        } else {
            h.ln()
        };
        let got = intrinsic_reward(h);
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 1e-12, || format!("H={h}: {got} vs {want}"))?;
        check((lo..=0.0).contains(&got), || format!("H={h}: {got} outside [ln 0.2, 0]"))?;
    }
    Ok(format!("1000 points on [0, 3], max error {worst:.1e}"))
}

// ---- 5: value head --------------------------------------------------------

fn meta(cfg: &RunConfig, vocab_hash: String) -> Meta {
    Meta { stage: "acceptance".into(), config_hash: cfg.hash(), vocab_hash, seed: cfg.seed }
}

fn value_head() -> Outcome {
    let cfg = RunConfig::desk();
    check(cfg.value_head.epochs == 200, || "desk value head does not train 200 epochs".into())?;
    check(cfg.value_head.optimizer.learning_rate == 1e-4, || "desk value head learning rate is not 1e-4".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (vocab, splits) = stages::build_corpus(&cfg).map_err(|e| e.to_string())?;
    let m = meta(&cfg, vocab.hash());
    let trash = dir.path().join("diverged.ltg");
    let (vae, ..) = stages::train_vae_stage(&splits, &vocab, &cfg, cfg.seqvae.epochs, &m, &trash).map_err(|e| e.to_string())?;
    let (gan, ..) = stages::train_gan_stage(&vae, &splits, &cfg, &m, &trash).map_err(|e| e.to_string())?;
    let (_, metrics, _) = stages::pretrain_vh_stage(&vae, &gan, &splits, &cfg).map_err(|e| e.to_string())?;
    let mae = metrics["heldout_mae"];
    check(mae <= 0.05, || format!("held-out MAE {mae:.4} > 0.05"))?;
    Ok(format!("held-out MAE {mae:.4} (untrained {:.4}, train {:.4})", metrics["heldout_mae_before"], metrics["train_mae"]))
}

// ---- 6: Frechet -----------------------------------------------------------

fn set(data: Matrix) -> EmbeddingSet {
    EmbeddingSet::new(data, "acceptance").unwrap()
}

fn frechet_sanity() -> Outcome {
    let mut rng = seeded(derive_seed(0, "frechet"));
    let a = normal_matrix(&mut rng, 200, 5);
    let same = frechet(&set(a.clone()), &set(a.clone())).map_err(|e| e.to_string())?;
    check(same.abs() < 1e-6, || format!("frechet(a, a) = {same:e}"))?;

    let v = [0.5, -1.0, 2.0, 0.0, 0.25];
    let mut shifted = a.clone();
    for r in 0..shifted.rows() {
        for (x, d) in shifted.row_mut(r).iter_mut().zip(v) {
            *x += d;
        }
    }
    let want: f64 = v.iter().map(|x| x * x).sum();
    let shift = frechet(&set(a), &set(shifted)).map_err(|e| e.to_string())?;
    check((shift - want).abs() < 1e-6, || format!("mean shift gives {shift}, want {want}"))?;

    let n = 100_000;
    let x = Matrix::from_vec(n, 1, (0..n).map(|_| standard_normal(&mut rng)).collect());
    let y = Matrix::from_vec(n, 1, (0..n).map(|_| 2.0 * standard_normal(&mut rng)).collect());
    let mc = frechet(&set(x), &set(y)).map_err(|e| e.to_string())?;
    check((mc - 1.0).abs() < 0.05, || format!("N(0,1) vs N(0,4): {mc}, want 1 +- 0.05"))?;
    Ok(format!("self {same:.1e}, shift {shift:.9} (want {want}), 1-D variance {mc:.4} (want 1)"))
}

// ---- 7: FID length bias ---------------------------------------------------

/// Appends the first words of the next sentence: same content, longer.
fn lengthen(test: &[TokenSequence], extra: usize) -> Vec<TokenSequence> {
    (0..test.len())
        .map(|i| {
            let mut w = test[i].words().to_vec();
            let next = test[(i + 1) % test.len()].words();
            w.extend_from_slice(&next[..extra.min(next.len())]);
            TokenSequence::from_words(&w)
        })
        .collect()
}

/// Shuffles each sentence's words: same length, order destroyed.
fn scramble(test: &[TokenSequence], rng: &mut SeededRng) -> Vec<TokenSequence> {
    test.iter()
        .map(|s| {
            let mut w = s.words().to_vec();
            w.shuffle(rng);
            TokenSequence::from_words(&w)
        })
        .collect()
}

fn words(s: &[TokenSequence]) -> Vec<Vec<u32>> {
    s.iter().map(|x| x.words().to_vec()).collect()
}

fn fid_bias() -> Outcome {
    let cfg = RunConfig::desk();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (vocab, splits) = stages::build_corpus(&cfg).map_err(|e| e.to_string())?;
    let m = meta(&cfg, vocab.hash());
    let (vae, ..) = stages::train_vae_stage(&splits, &vocab, &cfg, 10, &m, &dir.path().join("diverged.ltg"))
        .map_err(|e| e.to_string())?;
    let test = &splits.test;
    let scrambled = scramble(test, &mut seeded(derive_seed(cfg.seed, "scramble")));
    let shifted = lengthen(test, 5);
    let et = embed(test, &vae);
    let fid_scrambled = frechet(&embed(&scrambled, &vae), &et).map_err(|e| e.to_string())?;
    let fid_shifted = frechet(&embed(&shifted, &vae), &et).map_err(|e| e.to_string())?;
    let tw = words(test);
    let bb_scrambled = bbleu(&tw, &words(&scrambled), 2);
    let bb_shifted = bbleu(&tw, &words(&shifted), 2);
    let detail = format!(
        "scrambled FID {fid_scrambled:.3} BBLEU-2 {bb_scrambled:.3}; length-shifted FID {fid_shifted:.3} BBLEU-2 {bb_shifted:.3}"
    );
    check(fid_scrambled < fid_shifted && bb_scrambled < bb_shifted, || detail.clone())?;
    Ok(detail)
}

// ---- 8: ablation ----------------------------------------------------------

fn ablation_direction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports: Vec<AblationReport> = Vec::new();
    for seed in 1..=5 {
        let mut cfg = RunConfig::desk();
        cfg.seed = seed;
        let (vocab, splits) = stages::build_corpus(&cfg).map_err(|e| e.to_string())?;
        check(vocab.len() <= 200, || format!("vocabulary has {} entries", vocab.len()))?;
        let (report, _) = ablation(&vocab, &splits, &cfg, dir.path()).map_err(|e| format!("seed {seed}: {e}"))?;
        reports.push(report);
    }
    let quality = reports.iter().filter(|r| r.quality_improves()).count();
    let diversity = reports.iter().filter(|r| r.diversity_drops()).count();
    let rewards: Vec<String> = reports
        .iter()
        .map(|r| format!("{:.3}->{:.3}", r.columns[0].mean_reward, r.columns[1].mean_reward))
        .collect();
    let detail = format!("reward up {quality}/5 [{}], diversity down {diversity}/5", rewards.join(" "));
    check(quality >= 4 && diversity >= 4, || detail.clone())?;
    Ok(detail)
}

// ---- 9, 10: pipeline runs -------------------------------------------------

fn ltg_hashes(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|x| x == "ltg") {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, artifacts::file_hash(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn smoke_run(dir: &Path) -> Result<(BTreeMap<String, String>, String), String> {
    let x = Experiment::new(dir, common::fixture_desk_config()).map_err(|e| e.to_string())?;
    x.run_all().map_err(|e| e.to_string())?;
    let report = std::fs::read_to_string(dir.join(METRICS_FILE)).map_err(|e| e.to_string())?;
    Ok((ltg_hashes(dir)?, report))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (ha, ra) = smoke_run(a.path())?;
    let (hb, rb) = smoke_run(b.path())?;
    check(ha == hb, || format!("checkpoint hashes differ: {ha:?} vs {hb:?}"))?;
    check(ra == rb, || "metrics reports differ".into())?;
    Ok(format!("{} checkpoints and the metrics report identical across two runs", ha.len()))
}

fn frozen() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let x = Experiment::new(dir.path(), common::fixture_desk_config()).map_err(|e| e.to_string())?;
    x.run_all().map_err(|e| e.to_string())?;
    let (vocab, _) = x.load_corpus().map_err(|e| e.to_string())?;
    let base = artifacts::load_vae(&dir.path().join(artifacts::VAE), &vocab).map_err(|e| e.to_string())?;
    let tuned = artifacts::load_vae(&dir.path().join(artifacts::RL), &vocab).map_err(|e| e.to_string())?;
    check(base.frozen_hash() == tuned.frozen_hash(), || "decoder parameters outside the output projection changed".into())?;
    check(base.params_hash() != tuned.params_hash(), || "finetuning left the output projection unchanged".into())?;
    let changed: BTreeMap<&str, bool> = ["out.w", "out.b"]
        .into_iter()
        .map(|n| (n, base.params().get(n) != tuned.params().get(n)))
        .collect();
    Ok(format!("frozen hash {} unchanged; output projection changed {changed:?}", &base.frozen_hash()[..12]))
}
