//! Scores for judging a trained SAE.
//!
//! The central one is the N-th decoder projection score `s_n^dec`: project the
//! centered inputs onto every decoder direction, flatten the `batch × h`
//! projections, sort them in descending order and read the entry at zero-based
//! index `n · batch`. With the right `k`, latents rarely align with inputs
//! they do not track, so the score bottoms out.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{check_shape, Error, Result};
use crate::experiments::RunRecord;
use crate::sae::{forward, SaeParams};
use crate::Real;

/// `s_n^dec` for several ranks on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderProjectionReport {
    pub n_values: Vec<usize>,
    pub scores: Vec<f64>,
    pub batch: usize,
    pub k_at_eval: f64,
}

/// Decoder/feature cosine similarities and matching summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `n_latents × n_features`
    pub cosine: Array2<f64>,
    pub max_per_feature: Array1<f64>,
    pub mean_max_cosine: f64,
    /// Greedy one-to-one assignment: `permutation[latent] = Some(feature)`.
    pub permutation: Vec<Option<usize>>,
    /// Latents whose decoder column had zero norm.
    pub zero_columns: Vec<usize>,
}

impl AlignmentReport {
    /// Number of features whose best latent has cosine at least `threshold`.
    pub fn features_matched(&self, threshold: f64) -> usize {
        self.max_per_feature.iter().filter(|&&c| c >= threshold).count()
    }

    /// Mean of `max_per_feature` over a feature index range.
    pub fn mean_max_over(&self, features: std::ops::Range<usize>) -> f64 {
        let slice = self.max_per_feature.slice(ndarray::s![features]);
        slice.mean().unwrap_or(f64::NAN)
    }
}

/// `Z[r][j] = (x_r − b_dec) · w_dec[:, j]`
pub fn decoder_projections<T: Real>(params: &SaeParams<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    check_shape(
        "decoder_projections input",
        (x.nrows(), params.input_dim()),
        x.dim(),
    )?;
    Ok((&x - &params.b_dec).dot(&params.w_dec))
}

fn check_rank(n: usize, h: usize, batch: usize) -> Result<()> {
    if n < 1 || n > h || n * batch >= batch * h {
        return Err(Error::param(format!(
            "rank n = {n} out of range for {h} latents (need 1 <= n < {h})"
        )));
    }
    Ok(())
}

fn descending(a: &f64, b: &f64) -> Ordering {
    b.total_cmp(a)
}

/// `s_n^dec` for one rank.
pub fn nth_decoder_projection<T: Real>(
    params: &SaeParams<T>,
    x: ArrayView2<T>,
    n: usize,
) -> Result<f64> {
    Ok(nth_decoder_projections(params, x, &[n])?.scores[0])
}

/// `s_n^dec` for every rank in `n_values`, sharing one projection pass.
pub fn nth_decoder_projections<T: Real>(
    params: &SaeParams<T>,
    x: ArrayView2<T>,
    n_values: &[usize],
) -> Result<DecoderProjectionReport> {
    let batch = x.nrows();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    for &n in n_values {
        check_rank(n, params.n_latents(), batch)?;
    }
    let z = decoder_projections(params, x)?;
    let mut flat: Vec<f64> = z.iter().map(|v| v.f64()).collect();
    let scores = ranked_values(&mut flat, n_values.iter().map(|&n| n * batch));
    Ok(DecoderProjectionReport {
        n_values: n_values.to_vec(),
        scores,
        batch,
        k_at_eval: params.k,
    })
}

/// Values at the given zero-based positions of the descending order of
/// `values`. Reorders `values`.
fn ranked_values(values: &mut [f64], positions: impl Iterator<Item = usize>) -> Vec<f64> {
    positions
        .map(|pos| {
            let (_, v, _) = values.select_nth_unstable_by(pos, descending);
            *v
        })
        .collect()
}

/// Cosine similarity of every decoder column with every true feature, plus a
/// greedy one-to-one matching.
pub fn cosine_similarity_matrix<T: Real>(
    w_dec: &Array2<T>,
    features: &Array2<f32>,
) -> Result<AlignmentReport> {
    let (d, h) = w_dec.dim();
    let n = features.nrows();
    check_shape("cosine_similarity_matrix features", (n, d), features.dim())?;

    let dec = w_dec.map(|v| v.f64());
    let feat = features.mapv(f64::from);
    let dec_norms: Vec<f64> = dec.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let feat_norms: Vec<f64> = feat.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let dots = dec.t().dot(&feat.t());

    let mut zero_columns = Vec::new();
    let mut cosine = Array2::<f64>::zeros((h, n));
    for j in 0..h {
        if dec_norms[j] == 0.0 {
            zero_columns.push(j);
            continue;
        }
        for i in 0..n {
            if feat_norms[i] > 0.0 {
                cosine[[j, i]] = dots[[j, i]] / (dec_norms[j] * feat_norms[i]);
            }
        }
    }
    if !zero_columns.is_empty() {
        warn!(?zero_columns, "zero-norm decoder columns in alignment");
    }

    let max_per_feature = if h == 0 {
        Array1::from_elem(n, f64::NAN)
    } else {
        cosine.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b))
    };
    let mean_max_cosine = max_per_feature.mean().unwrap_or(f64::NAN);
    let permutation = greedy_matching(&cosine);
    Ok(AlignmentReport {
        cosine,
        max_per_feature,
        mean_max_cosine,
        permutation,
        zero_columns,
    })
}

fn greedy_matching(cosine: &Array2<f64>) -> Vec<Option<usize>> {
    let (h, n) = cosine.dim();
    let mut pairs: Vec<(usize, usize)> = (0..h).flat_map(|j| (0..n).map(move |i| (j, i))).collect();
    pairs.sort_by(|&(ja, ia), &(jb, ib)| {
        descending(&cosine[[ja, ia]], &cosine[[jb, ib]]).then((ja, ia).cmp(&(jb, ib)))
    });
    let mut latent_to_feature = vec![None; h];
    let mut feature_taken = vec![false; n];
    for (j, i) in pairs {
        if latent_to_feature[j].is_none() && !feature_taken[i] {
            latent_to_feature[j] = Some(i);
            feature_taken[i] = true;
        }
    }
    latent_to_feature
}

/// `1 − ‖x − x̂‖² / ‖x − mean(x)‖²`, with `x̂` from the BatchTopK forward pass
/// at `params.k`.
pub fn variance_explained<T: Real>(params: &SaeParams<T>, x: ArrayView2<T>) -> Result<f64> {
    if x.nrows() < 2 {
        return Err(Error::param("variance explained needs at least two rows"));
    }
    let trace = forward(params, x)?;
    variance_explained_from(x, &trace.recon)
}

pub(crate) fn variance_explained_from<T: Real>(x: ArrayView2<T>, recon: &Array2<T>) -> Result<f64> {
    let x64 = x.map(|v| v.f64());
    let mean = x64.mean_axis(Axis(0)).expect("rows > 0");
    let total: f64 = (&x64 - &mean).iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Undefined("inputs have zero variance".into()));
    }
    let resid: f64 = x64
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| {
            let d = a - b.f64();
            d * d
        })
        .sum();
    Ok(1.0 - resid / total)
}

/// Latents that never fired across a window of recorded intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadLatents {
    pub count: usize,
    pub indices: Vec<usize>,
}

/// Dead latents across the recorded intervals `window` of a run.
pub fn dead_latent_count(record: &RunRecord, window: std::ops::Range<usize>) -> Result<DeadLatents> {
    let intervals = record
        .fire_counts
        .get(window.clone())
        .filter(|w| !w.is_empty())
        .ok_or_else(|| Error::param(format!("empty or out-of-range window {window:?}")))?;
    let h = intervals[0].len();
    let indices: Vec<usize> = (0..h)
        .filter(|&j| intervals.iter().all(|counts| counts[j] == 0))
        .collect();
    Ok(DeadLatents {
        count: indices.len(),
        indices,
    })
}
