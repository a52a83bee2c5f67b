//! BatchTopK sparse autoencoder.
//!
//! ```text
//! a    = BatchTopK(W_enc (x − b_dec) + b_enc)
//! x̂    = W_dec a + b_dec
//! ```
//!
//! `W_enc` is `n_latents × input_dim`, `W_dec` is `input_dim × n_latents` and
//! every decoder column is kept at unit norm.

mod backward;
mod forward;
mod optim;
mod train;

pub use backward::{backward, Gradients};
pub use forward::{
    batch_topk_select, encode_preacts, forward, forward_thresholded, selection_budget,
    ForwardTrace,
};
pub use optim::{
    adam_step, estimate_inference_threshold, project_decoder_gradient, renormalize_decoder,
    AdamState, ThresholdEstimator, THRESHOLD_DECAY,
};
pub use train::{train, ActivationSource, MatrixSource, ToySource, TrainConfig};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::toy_data::FeatureDictionary;
use crate::Real;

/// Weights of a BatchTopK SAE.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams<T: Real = f32> {
    /// `n_latents × input_dim`
    pub w_enc: Array2<T>,
    /// `input_dim × n_latents`; column `j` is latent `j`'s direction.
    pub w_dec: Array2<T>,
    pub b_enc: Array1<T>,
    pub b_dec: Array1<T>,
    /// Target mean L0. The per-batch selection count is `round(k · batch)`.
    pub k: f64,
    /// Activation cutoff used for single-sample inference.
    pub inference_threshold: T,
}

impl<T: Real> SaeParams<T> {
    pub fn input_dim(&self) -> usize {
        self.w_dec.nrows()
    }

    pub fn n_latents(&self) -> usize {
        self.w_dec.ncols()
    }

    /// Largest deviation of a decoder column norm from 1.
    pub fn max_decoder_norm_error(&self) -> f64 {
        self.w_dec
            .columns()
            .into_iter()
            .map(|c| (c.dot(&c).f64().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Real>(&self) -> SaeParams<U> {
        let conv = |x: &T| U::of(x.f64());
        SaeParams {
            w_enc: self.w_enc.map(conv),
            w_dec: self.w_dec.map(conv),
            b_enc: self.b_enc.map(conv),
            b_dec: self.b_dec.map(conv),
            k: self.k,
            inference_threshold: conv(&self.inference_threshold),
        }
    }
}

/// Random unit-norm decoder columns with the encoder tied to the decoder
/// transpose, zero biases and a zero inference threshold.
pub fn init_params<T: Real>(
    input_dim: usize,
    n_latents: usize,
    k: f64,
    rng: &mut impl Rng,
) -> Result<SaeParams<T>> {
    if input_dim == 0 || n_latents == 0 {
        return Err(Error::param("input_dim and n_latents must be positive"));
    }
    if !(k > 0.0) || k > n_latents as f64 {
        return Err(Error::param(format!(
            "k = {k} must lie in (0, n_latents = {n_latents}]"
        )));
    }
    let mut w_dec = Array2::<T>::zeros((input_dim, n_latents));
    for mut col in w_dec.columns_mut() {
        col.assign(&random_unit_vector(input_dim, rng));
    }
    Ok(SaeParams {
        w_enc: w_dec.t().to_owned(),
        w_dec,
        b_enc: Array1::zeros(n_latents),
        b_dec: Array1::zeros(input_dim),
        k,
        inference_threshold: T::zero(),
    })
}

pub(crate) fn random_unit_vector<T: Real>(dim: usize, rng: &mut impl Rng) -> Array1<T> {
    loop {
        let v = Array1::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v.mapv(|x| T::of(x / norm));
        }
    }
}

/// An SAE whose encoder and decoder are the true features, with `k` set by
/// hand.
pub fn build_ground_truth_sae(dict: &FeatureDictionary, k: f64) -> SaeParams<f32> {
    let features = dict.features.clone();
    SaeParams {
        w_dec: features.t().to_owned(),
        w_enc: features,
        b_enc: Array1::zeros(dict.n_features()),
        b_dec: Array1::zeros(dict.input_dim()),
        k,
        inference_threshold: 0.0,
    }
}

/// Per-latent number of active entries in a mask.
pub(crate) fn latent_fire_counts(mask: &Array2<bool>) -> Vec<u32> {
    mask.axis_iter(Axis(1))
        .map(|c| c.iter().filter(|&&m| m).count() as u32)
        .collect()
}
