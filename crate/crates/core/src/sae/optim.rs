use ndarray::{Array2, ArrayViewMut, Dimension, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{random_unit_vector, ForwardTrace, Gradients, SaeParams};
use crate::error::{Error, Result};
use crate::Real;

/// Adam moment buffers and hyperparameters for the SAE weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &SaeParams<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }
}

struct AdamCoefficients<T> {
    beta1: T,
    beta2: T,
    step_size: T,
    bias2: T,
    eps: T,
}

fn update_tensor<T: Real, D: Dimension>(
    param: ArrayViewMut<T, D>,
    grad: &ndarray::Array<T, D>,
    m: &mut ndarray::Array<T, D>,
    v: &mut ndarray::Array<T, D>,
    c: &AdamCoefficients<T>,
) {
    let one = T::one();
    Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = c.beta1 * *m + (one - c.beta1) * g;
            *v = c.beta2 * *v + (one - c.beta2) * g * g;
            *p = *p - c.step_size * *m / ((*v / c.bias2).sqrt() + c.eps);
        });
}

/// Removes from each decoder-column gradient its component along the column,
/// so the step moves tangentially to the unit sphere.
pub fn project_decoder_gradient<T: Real>(w_dec: &Array2<T>, grad: &Array2<T>) -> Array2<T> {
    let mut out = grad.clone();
    for (col, mut g) in w_dec.columns().into_iter().zip(out.columns_mut()) {
        let norm2 = col.dot(&col);
        if norm2 > T::zero() {
            let coef = g.dot(&col) / norm2;
            g.zip_mut_with(&col, |gi, &ci| *gi = *gi - coef * ci);
        }
    }
    out
}

/// Rescales every decoder column to unit norm. Columns that collapsed to
/// zero are redrawn at random (with a tied encoder row and zero bias) and
/// their indices returned.
pub fn renormalize_decoder<T: Real>(params: &mut SaeParams<T>, rng: &mut impl Rng) -> Vec<usize> {
    let d = params.input_dim();
    let mut dead = Vec::new();
    for (j, mut col) in params.w_dec.columns_mut().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm > T::zero() && norm.is_finite() {
            col.mapv_inplace(|c| c / norm);
        } else {
            dead.push(j);
        }
    }
    for &j in &dead {
        let fresh = random_unit_vector::<T>(d, rng);
        params.w_dec.column_mut(j).assign(&fresh);
        params.w_enc.row_mut(j).assign(&fresh);
        params.b_enc[j] = T::zero();
    }
    dead
}

/// One bias-corrected Adam step on all SAE weights, with tangent projection of
/// the decoder gradient before and decoder renormalization after.
///
/// Returns the decoder columns that had to be reinitialised.
pub fn adam_step<T: Real>(
    params: &mut SaeParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            step: state.t,
        });
    }
    let dec_grad = project_decoder_gradient(&params.w_dec, &grads.w_dec);

    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let c = AdamCoefficients {
        beta1: T::of(state.beta1),
        beta2: T::of(state.beta2),
        step_size: T::of(state.lr / bias1),
        bias2: T::of(bias2),
        eps: T::of(state.eps),
    };
    let (m, v) = (&mut state.m, &mut state.v);
    update_tensor(params.w_enc.view_mut(), &grads.w_enc, &mut m.w_enc, &mut v.w_enc, &c);
    update_tensor(params.w_dec.view_mut(), &dec_grad, &mut m.w_dec, &mut v.w_dec, &c);
    update_tensor(params.b_enc.view_mut(), &grads.b_enc, &mut m.b_enc, &mut v.b_enc, &c);
    update_tensor(params.b_dec.view_mut(), &grads.b_dec, &mut m.b_dec, &mut v.b_dec, &c);

    let dead = renormalize_decoder(params, rng);
    for &j in &dead {
        for buf in [&mut state.m, &mut state.v] {
            buf.w_dec.column_mut(j).fill(T::zero());
            buf.w_enc.row_mut(j).fill(T::zero());
            buf.b_enc[j] = T::zero();
        }
    }
    Ok(dead)
}

pub const THRESHOLD_DECAY: f64 = 0.99;

/// Exponential moving average of the smallest selected activation per batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimator {
    value: Option<f64>,
}

impl ThresholdEstimator {
    pub fn observe(&mut self, min_selected: f64) -> f64 {
        let next = match self.value {
            None => min_selected,
            Some(t) => THRESHOLD_DECAY * t + (1.0 - THRESHOLD_DECAY) * min_selected,
        };
        self.value = Some(next);
        next
    }

    pub fn observe_trace<T: Real>(&mut self, trace: &ForwardTrace<T>) -> Option<f64> {
        trace.min_selected().map(|m| self.observe(m.f64()))
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }
}

/// Threshold estimate after a stream of training traces. Zero if no trace
/// selected anything.
pub fn estimate_inference_threshold<'a, T: Real>(
    traces: impl IntoIterator<Item = &'a ForwardTrace<T>>,
) -> f64 {
    let mut est = ThresholdEstimator::default();
    for trace in traces {
        est.observe_trace(trace);
    }
    est.value().unwrap_or(0.0).max(0.0)
}
