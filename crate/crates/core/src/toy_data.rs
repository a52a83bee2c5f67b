//! Synthetic ground truth: orthonormal features, correlated firing patterns
//! and Gaussian firing magnitudes.
//!
//! Firing indicators come from a Gaussian copula. Each row draws a latent
//! `z ~ N(0, C)` where `C` is the feature correlation matrix, and feature `i`
//! fires iff `z_i` exceeds the standard-normal upper quantile of its marginal
//! probability. The marginals are therefore exact while the correlation
//! matrix shapes the co-firing structure.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::error::{Error, Result};

/// Parameters of the toy world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelSpec {
    pub input_dim: usize,
    pub n_features: usize,
    /// Firing probability of feature 0.
    pub p_first: f64,
    /// Firing probability of the last feature; intermediate features are
    /// linearly interpolated.
    pub p_last: f64,
    pub magnitude_mean: f64,
    pub magnitude_std: f64,
    /// Weight of the random Gram component in the correlation matrix.
    pub correlation_strength: f64,
    pub seed: u64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            input_dim: 100,
            n_features: 50,
            p_first: 0.345,
            p_last: 0.05,
            magnitude_mean: 1.0,
            magnitude_std: 0.15,
            correlation_strength: 0.3,
            seed: 0,
        }
    }
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.input_dim == 0 {
            return Err(Error::param("input_dim and n_features must be positive"));
        }
        if self.n_features > self.input_dim {
            return Err(Error::Dimension(format!(
                "{} orthogonal features do not fit in {} dimensions",
                self.n_features, self.input_dim
            )));
        }
        if !(self.p_last > 0.0 && self.p_last <= self.p_first && self.p_first <= 1.0) {
            return Err(Error::param(format!(
                "need 0 < p_last <= p_first <= 1, got p_first={} p_last={}",
                self.p_first, self.p_last
            )));
        }
        if !(self.magnitude_std >= 0.0) || !self.magnitude_mean.is_finite() {
            return Err(Error::param("magnitude_std must be >= 0 and magnitude_mean finite"));
        }
        check_strength(self.correlation_strength)
    }
}

fn check_strength(strength: f64) -> Result<()> {
    if (0.0..1.0).contains(&strength) {
        Ok(())
    } else {
        Err(Error::param(format!(
            "correlation strength must lie in [0, 1), got {strength}"
        )))
    }
}

/// The ground-truth feature set.
///
/// Probabilities and correlations are held at single precision (as `f64`
/// values that are exactly representable in `f32`) so that the dictionary
/// file round-trips bit for bit.
#[derive(Debug, Clone)]
pub struct FeatureDictionary {
    /// `n_features × input_dim`, rows are orthonormal.
    pub features: Array2<f32>,
    pub probs: Array1<f64>,
    pub correlation: Array2<f64>,
    /// Copula cutoffs: feature `i` fires iff `z_i > gaussian_thresholds[i]`.
    pub gaussian_thresholds: Array1<f64>,
    pub magnitude_mean: f64,
    pub magnitude_std: f64,
    pub seed: u64,
    /// Lower factor `A` with `A Aᵀ = correlation`, used to draw latent normals.
    factor: Array2<f64>,
}

impl FeatureDictionary {
    /// Assembles a dictionary from its stored parts, deriving the copula
    /// thresholds and the sampling factor.
    pub fn from_parts(
        features: Array2<f32>,
        probs: Array1<f64>,
        correlation: Array2<f64>,
        magnitude_mean: f64,
        magnitude_std: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = features.nrows();
        if probs.len() != n {
            return Err(Error::Dimension(format!(
                "{} probabilities for {n} features",
                probs.len()
            )));
        }
        crate::error::check_shape("correlation", (n, n), correlation.dim())?;
        if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::param("firing probabilities must lie in (0, 1]"));
        }
        let gaussian_thresholds = probs.mapv(upper_quantile);
        let factor = correlation_factor(&correlation);
        Ok(Self {
            features,
            probs,
            correlation,
            gaussian_thresholds,
            magnitude_mean,
            magnitude_std,
            seed,
            factor,
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }
}

/// A batch of training inputs together with the firing pattern that made it.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// `batch × input_dim`
    pub activations: Array2<f32>,
    /// `batch × n_features`; zero means the feature did not fire.
    pub firings: Array2<f32>,
    pub batch: usize,
}

/// Standard-normal upper quantile: the `t` with `P(Z > t) = p`.
fn upper_quantile(p: f64) -> f64 {
    if p >= 1.0 {
        f64::NEG_INFINITY
    } else {
        NormalDist::standard().inverse_cdf(1.0 - p)
    }
}

fn to_single(x: f64) -> f64 {
    x as f32 as f64
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Builds the ground-truth dictionary. Deterministic in `spec.seed`.
pub fn generate_feature_dictionary(spec: &ToyModelSpec) -> Result<FeatureDictionary> {
    spec.validate()?;
    let (d, n) = (spec.input_dim, spec.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Orthonormal columns from a thin QR of a Gaussian matrix; features are
    // the transposed columns.
    let q = standard_normal_matrix(d, n, &mut rng).qr().q();
    let features = Array2::from_shape_fn((n, d), |(i, c)| q[(c, i)] as f32);

    let probs = Array1::from_shape_fn(n, |i| {
        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        to_single(spec.p_first + (spec.p_last - spec.p_first) * t)
    });

    let correlation_seed: u64 = rng.random();
    let correlation = generate_correlation_matrix(n, spec.correlation_strength, correlation_seed)?
        .mapv(to_single);

    FeatureDictionary::from_parts(
        features,
        probs,
        correlation,
        spec.magnitude_mean,
        spec.magnitude_std,
        spec.seed,
    )
}

/// Random correlation matrix `(1 − s)·I + s·normalize(G Gᵀ)` followed by a
/// PSD repair (eigenvalue clipping, then unit-diagonal rescaling).
pub fn generate_correlation_matrix(n: usize, strength: f64, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::param("correlation matrix needs n >= 1"));
    }
    check_strength(strength)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = standard_normal_matrix(n, n, &mut rng);
    let gram = &g * g.transpose();
    let mut c = DMatrix::from_fn(n, n, |i, j| {
        let normalized = gram[(i, j)] / (gram[(i, i)] * gram[(j, j)]).sqrt();
        let identity = if i == j { 1.0 } else { 0.0 };
        (1.0 - strength) * identity + strength * normalized
    });

    let eig = SymmetricEigen::new(c.clone());
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        c = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    }
    let scale: Vec<f64> = (0..n).map(|i| c[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();

    let mut out = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = c[(i, j)] / (scale[i] * scale[j]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// Returns `A` with `A Aᵀ = c`. Cholesky when `c` is positive definite,
/// otherwise the symmetric square root through the clipped spectrum.
fn correlation_factor(c: &Array2<f64>) -> Array2<f64> {
    let n = c.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| c[[i, j]]);
    let a = match m.clone().cholesky() {
        Some(ch) => ch.l(),
        None => {
            let eig = SymmetricEigen::new(m);
            let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
        }
    };
    Array2::from_shape_fn((n, n), |(i, j)| a[(i, j)])
}

/// Draws latent copula normals `z = ε Aᵀ` for `batch` rows.
fn latent_normals(dict: &FeatureDictionary, batch: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = dict.n_features();
    let eps = Array2::from_shape_simple_fn((batch, n), || rng.sample::<f64, _>(StandardNormal));
    eps.dot(&dict.factor.t())
}

fn draw_magnitude(dict: &FeatureDictionary, rng: &mut impl Rng) -> f32 {
    if dict.magnitude_std == 0.0 {
        return dict.magnitude_mean.max(0.0) as f32;
    }
    let normal = Normal::new(dict.magnitude_mean, dict.magnitude_std).expect("std > 0");
    // Truncation at zero by rejection; the clamp only guards degenerate means.
    for _ in 0..64 {
        let m = normal.sample(rng);
        if m >= 0.0 {
            return m as f32;
        }
    }
    0.0
}

/// Samples a batch of firing patterns and the inputs they produce.
pub fn sample_batch(
    dict: &FeatureDictionary,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = dict.n_features();
    let z = latent_normals(dict, batch, rng);
    let mut firings = Array2::<f32>::zeros((batch, n));
    for (z_row, mut f_row) in z.rows().into_iter().zip(firings.rows_mut()) {
        for i in 0..n {
            if z_row[i] > dict.gaussian_thresholds[i] {
                f_row[i] = draw_magnitude(dict, rng);
            }
        }
    }
    let activations = firings.dot(&dict.features);
    Ok(SampleBatch {
        activations,
        firings,
        batch,
    })
}

/// Analytic mean number of firing features per sample.
pub fn expected_l0(dict: &FeatureDictionary) -> f64 {
    dict.probs.sum()
}

/// Monte Carlo mean number of firing features per sample.
pub fn empirical_l0(dict: &FeatureDictionary, n_samples: usize, rng: &mut impl Rng) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::param("empirical_l0 needs at least one sample"));
    }
    const CHUNK: usize = 8192;
    let mut remaining = n_samples;
    let mut fires: u64 = 0;
    while remaining > 0 {
        let rows = remaining.min(CHUNK);
        let z = latent_normals(dict, rows, rng);
        fires += z
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(dict.gaussian_thresholds.iter())
                    .filter(|(z, t)| z > t)
                    .count() as u64
            })
            .sum::<u64>();
        remaining -= rows;
    }
    Ok(fires as f64 / n_samples as f64)
}

/// Per-feature firing frequencies of a batch.
pub fn firing_rates(batch: &SampleBatch) -> Array1<f64> {
    batch
        .firings
        .map(|&m| if m > 0.0 { 1.0 } else { 0.0 })
        .mean_axis(Axis(0))
        .expect("non-empty batch")
}
