//! Browser bindings for the pure pieces of the pipeline: BLEU and
//! Backwards-BLEU, the adaptive GAN update schedule, and per-token RL
//! returns with the entropy bonus. Every export takes plain text and
//! returns JSON so the page needs no glue beyond `JSON.parse`.

use ltg_core::evalmetrics::{bbleu, bleu, distinct_n, MAX_ORDER};
use ltg_core::latentgan::{
    adaptive_decide, lambda_schedule, loss_ratio, Decision, DEFAULT_RATIO_EPS,
};
use ltg_core::rlfinetune::{intrinsic_reward, returns, RewardTrace, ReturnsMode};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
struct ErrorReply {
    error: String,
}

fn reply<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v),
        Err(error) => serde_json::to_string(&ErrorReply { error }),
    }
    .expect("plain data serializes")
}

fn sentences(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

fn numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct BleuReply {
    pub orders: Vec<usize>,
    pub bleu: Vec<f64>,
    pub bbleu: Vec<f64>,
    pub distinct: [f64; 2],
}

pub fn bleu_report(generated: &str, test: &str) -> Result<BleuReply, String> {
    let (g, t) = (sentences(generated), sentences(test));
    if g.is_empty() || t.is_empty() {
        return Err("both sets need at least one sentence".into());
    }
    let orders: Vec<usize> = (1..=MAX_ORDER).collect();
    Ok(BleuReply {
        bleu: orders.iter().map(|&n| bleu(&g, &t, n)).collect(),
        bbleu: orders.iter().map(|&n| bbleu(&t, &g, n)).collect(),
        distinct: [distinct_n(&g, 1), distinct_n(&g, 2)],
        orders,
    })
}

/// BLEU-1..4 of `generated` (one sentence per line) against `test`, the
/// reverse direction, and distinct-1/2 of `generated`.
#[wasm_bindgen]
pub fn bleu_json(generated: &str, test: &str) -> String {
    reply(bleu_report(generated, test))
}

#[derive(Debug, Serialize)]
pub struct ScheduleStep {
    pub r_g: f64,
    pub r_d: f64,
    pub lambda: f64,
    pub update: &'static str,
}

/// Replays one loss pair per line (`generator, critic`) through the
/// adaptive rule, spreading the steps evenly over `epochs` for the
/// threshold schedule.
pub fn schedule(tape: &str, lambda0: f64, epochs: usize) -> Result<Vec<ScheduleStep>, String> {
    if !(0.0..=1.0).contains(&lambda0) {
        return Err("lambda0 must lie in [0, 1]".into());
    }
    let pairs: Vec<(f64, f64)> = tape
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match numbers(l)?.as_slice() {
            [g, d] => Ok((*g, *d)),
            _ => Err(format!("expected two losses per line, got {l:?}")),
        })
        .collect::<Result<_, _>>()?;
    let epochs = epochs.max(1);
    let per_epoch = pairs.len().div_ceil(epochs).max(1);
    let mut prev = pairs.first().copied().unwrap_or_default();
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, &(g, d))| {
            let r_g = loss_ratio(g, prev.0, DEFAULT_RATIO_EPS);
            let r_d = loss_ratio(d, prev.1, DEFAULT_RATIO_EPS);
            prev = (g, d);
            let lambda = lambda_schedule(i / per_epoch, epochs, lambda0);
            let update = match adaptive_decide(r_g, r_d, lambda) {
                Decision::UpdateDiscriminator => "critic",
                Decision::UpdateGenerator => "generator",
            };
            ScheduleStep { r_g, r_d, lambda, update }
        })
        .collect())
}

#[wasm_bindgen]
pub fn schedule_json(tape: &str, lambda0: f64, epochs: usize) -> String {
    reply(schedule(tape, lambda0, epochs))
}

#[derive(Debug, Serialize)]
pub struct ReturnsReply {
    pub intrinsic: Vec<f64>,
    pub past_inclusive: Vec<f64>,
    pub to_go: Vec<f64>,
}

/// Per-token returns of one sentence from its value-head rewards and
/// policy entropies.
pub fn token_returns(rewards: &str, entropies: &str, gamma: f64) -> Result<ReturnsReply, String> {
    let (r, h) = (numbers(rewards)?, numbers(entropies)?);
    if r.len() != h.len() {
        return Err(format!("{} rewards but {} entropies", r.len(), h.len()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err("gamma must lie in [0, 1]".into());
    }
    let intrinsic: Vec<f64> = h.iter().map(|&x| intrinsic_reward(x)).collect();
    let trace = RewardTrace { external: r.iter().sum(), rewards: r, entropies: h, intrinsic: intrinsic.clone(), gamma };
    Ok(ReturnsReply {
        past_inclusive: returns(&trace, ReturnsMode::PastInclusive),
        to_go: returns(&trace, ReturnsMode::ToGo),
        intrinsic,
    })
}

#[wasm_bindgen]
pub fn returns_json(rewards: &str, entropies: &str, gamma: f64) -> String {
    reply(token_returns(rewards, entropies, gamma))
}
