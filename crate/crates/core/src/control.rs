//! How `k` moves during training.
//!
//! [`L0Schedule`] covers fixed and linearly transitioning `k`. The automatic
//! controller treats the sliding-average decoder projection score `m` as a
//! function of `k`, estimates `dm/dk` by finite differences between
//! evaluation steps, biases the estimate towards lowering `k`, and feeds it to
//! a scalar Adam optimizer whose step is clamped to `[delta_min, delta_max]`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    LinearTransition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L0Schedule {
    pub kind: ScheduleKind,
    pub k_start: f64,
    pub k_end: f64,
    #[serde(default)]
    pub transition_steps: u64,
    #[serde(default)]
    pub hold_steps: u64,
}

impl L0Schedule {
    pub fn fixed(k: f64) -> Self {
        Self {
            kind: ScheduleKind::Fixed,
            k_start: k,
            k_end: k,
            transition_steps: 0,
            hold_steps: 0,
        }
    }

    pub fn linear(k_start: f64, k_end: f64, transition_steps: u64, hold_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::LinearTransition,
            k_start,
            k_end,
            transition_steps,
            hold_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_start > 0.0 && self.k_end > 0.0) {
            return Err(Error::param("schedule k values must be positive"));
        }
        if self.kind == ScheduleKind::Fixed && self.k_start != self.k_end {
            return Err(Error::param("a fixed schedule needs k_start == k_end"));
        }
        Ok(())
    }

    /// Steps covered by the schedule (transition plus hold).
    pub fn total_steps(&self) -> u64 {
        self.transition_steps + self.hold_steps
    }

    pub fn k_at(&self, step: u64) -> f64 {
        schedule_k_at_step(self, step)
    }
}

/// `k` at a training step. A zero-length transition jumps straight to `k_end`.
pub fn schedule_k_at_step(schedule: &L0Schedule, step: u64) -> f64 {
    match schedule.kind {
        ScheduleKind::Fixed => schedule.k_end,
        ScheduleKind::LinearTransition => {
            if step >= schedule.transition_steps {
                schedule.k_end
            } else {
                let frac = step as f64 / schedule.transition_steps as f64;
                schedule.k_start + (schedule.k_end - schedule.k_start) * frac
            }
        }
    }
}

/// Settings for the automatic L0 controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoL0Config {
    /// Rank `n` of the decoder projection score being minimised.
    pub n_for_metric: usize,
    /// Training steps between controller updates.
    pub eval_every: u64,
    /// Training steps between metric samples fed to the sliding window.
    pub metric_every: u64,
    /// Number of most recent metric samples averaged into `m`.
    pub sliding_window: usize,
    /// Downward bias `b` in `g + b·|g|`.
    pub bias_b: f64,
    pub grad_clip: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub controller_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub k_floor: f64,
    /// Upper bound on `k`; the trainer also caps it at the latent count.
    pub k_ceiling: Option<f64>,
    pub k_init: f64,
}

impl Default for AutoL0Config {
    fn default() -> Self {
        Self {
            n_for_metric: 20,
            eval_every: 100,
            metric_every: 10,
            sliding_window: 10,
            bias_b: 0.1,
            grad_clip: 1.0,
            delta_min: 0.5,
            delta_max: 2.0,
            controller_lr: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            k_floor: 1.0,
            k_ceiling: None,
            k_init: 22.0,
        }
    }
}

impl AutoL0Config {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_for_metric >= 1
            && self.eval_every >= 1
            && self.metric_every >= 1
            && self.sliding_window >= 1
            && self.bias_b > 0.0
            && self.bias_b < 1.0
            && self.grad_clip > 0.0
            && self.delta_min > 0.0
            && self.delta_min <= self.delta_max
            && self.controller_lr > 0.0
            && self.k_floor >= 1.0
            && self.k_init >= self.k_floor
            && self.k_ceiling.map_or(true, |c| c >= self.k_init);
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid auto-L0 config: {self:?}")))
        }
    }
}

/// Adam over a single scalar, used to step `k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: u64,
}

impl ScalarAdam {
    /// Returns the parameter change `−lr · m̂ / (√v̂ + ε)` for gradient `g`.
    pub fn step(&mut self, g: f64, lr: f64, beta1: f64, beta2: f64, eps: f64) -> f64 {
        self.t += 1;
        self.m = beta1 * self.m + (1.0 - beta1) * g;
        self.v = beta2 * self.v + (1.0 - beta2) * g * g;
        let m_hat = self.m / (1.0 - beta1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - beta2.powi(self.t as i32));
        -lr * m_hat / (v_hat.sqrt() + eps)
    }
}

/// Controller memory between evaluation steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AutoL0State {
    pub metric_history: VecDeque<f64>,
    /// `m_t` from the previous evaluation; `None` before the first one.
    pub last_metric_m: Option<f64>,
    /// The `k` change actually applied at the previous evaluation.
    pub last_delta_k: f64,
    pub adam_state: ScalarAdam,
    pub eval_counter: u64,
}

/// Outcome of one controller call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerUpdate {
    pub new_k: f64,
    /// `None` when the window was not yet full and nothing changed.
    pub step: Option<ControllerStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerStep {
    pub metric_m: f64,
    pub raw_grad: f64,
    pub biased_grad: f64,
    pub applied_delta: f64,
}

/// One row of the controller time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub step: u64,
    pub k: f64,
    pub metric_m: f64,
    pub raw_grad: f64,
    pub biased_grad: f64,
    pub applied_delta: f64,
}

/// `g + b·|g|`: never flips the sign of `g`. Since `k` moves against the
/// gradient, this is the sign that favours lowering `k`: a positive estimate
/// (metric grows with `k`) is amplified and a negative one shrunk, so noise in
/// a flat region averages out to a downward drift. The written form
/// `g − b·|g|` would do the opposite under descent.
pub fn biased_gradient(g: f64, bias_b: f64) -> f64 {
    g + bias_b * g.abs()
}

/// Mean of the most recent `min(window, len)` samples.
pub fn sliding_metric_average<'a>(
    history: impl IntoIterator<Item = &'a f64, IntoIter: DoubleEndedIterator>,
    window: usize,
) -> Result<f64> {
    let recent: Vec<f64> = history.into_iter().rev().take(window.max(1)).copied().collect();
    if recent.is_empty() {
        return Err(Error::param("metric history is empty"));
    }
    Ok(recent.iter().sum::<f64>() / recent.len() as f64)
}

/// Feeds fresh metric samples to the controller and, once the window is
/// full, moves `k`.
pub fn auto_l0_update(
    state: &mut AutoL0State,
    cfg: &AutoL0Config,
    fresh_metric_samples: &[f64],
    current_k: f64,
) -> Result<ControllerUpdate> {
    state.metric_history.extend(fresh_metric_samples.iter().copied());
    while state.metric_history.len() > cfg.sliding_window {
        state.metric_history.pop_front();
    }
    if state.metric_history.len() < cfg.sliding_window {
        return Ok(ControllerUpdate {
            new_k: current_k,
            step: None,
        });
    }
    state.eval_counter += 1;
    let metric_m = sliding_metric_average(&state.metric_history, cfg.sliding_window)?;

    let (raw_grad, biased_grad, proposed) = match state.last_metric_m {
        Some(prev) if state.last_delta_k != 0.0 => {
            let raw = ((metric_m - prev) / state.last_delta_k).clamp(-cfg.grad_clip, cfg.grad_clip);
            let biased = biased_gradient(raw, cfg.bias_b);
            let step = state
                .adam_state
                .step(biased, cfg.controller_lr, cfg.beta1, cfg.beta2, cfg.eps);
            (raw, biased, step)
        }
        // No usable finite difference yet: probe downwards.
        _ => (0.0, 0.0, -cfg.delta_min),
    };

    let magnitude = proposed.abs().clamp(cfg.delta_min, cfg.delta_max);
    let delta = if proposed > 0.0 { magnitude } else { -magnitude };
    let mut new_k = (current_k + delta).max(cfg.k_floor);
    if let Some(ceiling) = cfg.k_ceiling {
        new_k = new_k.min(ceiling);
    }
    let applied_delta = new_k - current_k;

    state.last_metric_m = Some(metric_m);
    state.last_delta_k = applied_delta;
    Ok(ControllerUpdate {
        new_k,
        step: Some(ControllerStep {
            metric_m,
            raw_grad,
            biased_grad,
            applied_delta,
        }),
    })
}
