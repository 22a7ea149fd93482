//! Update scheduling: the fixed k-critic schedule and the adaptive rule that
//! compares relative loss changes of the two networks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Default `c` in the ratio denominator.
pub const DEFAULT_RATIO_EPS: f64 = 1e-8;
pub const DEFAULT_LAMBDA0: f64 = 0.5;
pub const DEFAULT_CRITIC_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `k` critic updates per generator update.
    Standard,
    /// Per-step choice from loss-change ratios.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    UpdateDiscriminator,
    UpdateGenerator,
}

/// `|L_c - L_p| / (|L_p| + c)`.
///
/// WGAN losses are signed, so the denominator uses `|L_p|`; for
/// non-negative previous losses this is exactly `L_p + c`.
pub fn loss_ratio(current: f64, previous: f64, c: f64) -> f64 {
    (current - previous).abs() / (previous.abs() + c)
}

/// Update the critic iff `r_d > lambda * r_g`; ties go to the generator.
pub fn adaptive_decide(r_g: f64, r_d: f64, lambda: f64) -> Decision {
    if r_d > lambda * r_g {
        Decision::UpdateDiscriminator
    } else {
        Decision::UpdateGenerator
    }
}

/// Linear from `lambda0` at epoch 0 to 1 at `total_epochs - 1`, capped at 1.
pub fn lambda_schedule(epoch: usize, total_epochs: usize, lambda0: f64) -> f64 {
    if total_epochs <= 1 {
        return 1.0;
    }
    let t = epoch as f64 / (total_epochs - 1) as f64;
    (lambda0 + (1.0 - lambda0) * t).min(1.0)
}

/// Loss bookkeeping for the adaptive rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub prev_loss_g: f64,
    pub prev_loss_d: f64,
    pub curr_loss_g: f64,
    pub curr_loss_d: f64,
    pub c: f64,
    pub lambda_adaptive: f64,
    pub epoch: usize,
    pub generator_updates: usize,
    pub critic_updates: usize,
    /// Losses are averaged over this many most recent observations; 1 uses
    /// the current minibatch only.
    pub smoothing_window: usize,
    observed: usize,
    window_g: VecDeque<f64>,
    window_d: VecDeque<f64>,
}

impl SchedulerState {
    pub fn new(c: f64, lambda0: f64, smoothing_window: usize) -> Self {
        Self {
            prev_loss_g: 0.0,
            prev_loss_d: 0.0,
            curr_loss_g: 0.0,
            curr_loss_d: 0.0,
            c,
            lambda_adaptive: lambda0,
            epoch: 0,
            generator_updates: 0,
            critic_updates: 0,
            smoothing_window: smoothing_window.max(1),
            observed: 0,
            window_g: VecDeque::new(),
            window_d: VecDeque::new(),
        }
    }

    /// Records this step's losses. On the first observation the previous
    /// losses equal the current ones.
    pub fn observe(&mut self, loss_g: f64, loss_d: f64) {
        push_window(&mut self.window_g, loss_g, self.smoothing_window);
        push_window(&mut self.window_d, loss_d, self.smoothing_window);
        let (g, d) = (mean(&self.window_g), mean(&self.window_d));
        if self.observed == 0 {
            self.prev_loss_g = g;
            self.prev_loss_d = d;
        } else {
            self.prev_loss_g = self.curr_loss_g;
            self.prev_loss_d = self.curr_loss_d;
        }
        self.curr_loss_g = g;
        self.curr_loss_d = d;
        self.observed += 1;
    }

    pub fn set_epoch(&mut self, epoch: usize, total_epochs: usize, lambda0: f64) {
        self.epoch = epoch;
        // nondecreasing even if called out of order
        self.lambda_adaptive = self.lambda_adaptive.max(lambda_schedule(epoch, total_epochs, lambda0));
    }

    pub fn ratios(&self) -> (f64, f64) {
        adaptive_ratios(self)
    }

    pub fn decide(&self) -> Decision {
        let (r_g, r_d) = self.ratios();
        adaptive_decide(r_g, r_d, self.lambda_adaptive)
    }

    pub fn record(&mut self, d: Decision) {
        match d {
            Decision::UpdateDiscriminator => self.critic_updates += 1,
            Decision::UpdateGenerator => self.generator_updates += 1,
        }
    }
}

fn push_window(w: &mut VecDeque<f64>, v: f64, cap: usize) {
    w.push_back(v);
    while w.len() > cap {
        w.pop_front();
    }
}

fn mean(w: &VecDeque<f64>) -> f64 {
    w.iter().sum::<f64>() / w.len() as f64
}

/// `(r_G, r_D)` from the state's previous and current losses.
pub fn adaptive_ratios(s: &SchedulerState) -> (f64, f64) {
    (loss_ratio(s.curr_loss_g, s.prev_loss_g, s.c), loss_ratio(s.curr_loss_d, s.prev_loss_d, s.c))
}

/// One scripted step: losses observed at this step and the threshold weight
/// in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapeStep {
    pub loss_g: f64,
    pub loss_d: f64,
    pub lambda: f64,
}

/// Replays a loss tape through the scheduler, returning the decision taken
/// at every step.
pub fn replay_tape(tape: &[TapeStep], c: f64) -> Vec<Decision> {
    let mut s = SchedulerState::new(c, 1.0, 1);
    tape.iter()
        .map(|t| {
            s.observe(t.loss_g, t.loss_d);
            s.lambda_adaptive = t.lambda;
            let d = s.decide();
            s.record(d);
            d
        })
        .collect()
}
