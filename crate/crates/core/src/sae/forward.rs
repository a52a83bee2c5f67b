use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Zip};

use super::SaeParams;
use crate::error::{check_shape, Error, Result};
use crate::Real;

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real = f32> {
    /// `batch × n_latents` encoder outputs before selection.
    pub preacts: Array2<T>,
    /// `batch × n_latents` activations after BatchTopK.
    pub acts: Array2<T>,
    pub active_mask: Array2<bool>,
    /// `batch × input_dim`
    pub recon: Array2<T>,
    /// Squared reconstruction error summed over coordinates, averaged over rows.
    pub mse: f64,
}

impl<T: Real> ForwardTrace<T> {
    pub fn batch(&self) -> usize {
        self.preacts.nrows()
    }

    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|&&m| m).count()
    }

    /// Smallest activation among the selected entries, if any were selected.
    pub fn min_selected(&self) -> Option<T> {
        Zip::from(&self.acts)
            .and(&self.active_mask)
            .fold(None, |acc: Option<T>, &a, &m| match (m, acc) {
                (false, _) => acc,
                (true, None) => Some(a),
                (true, Some(b)) => Some(if a < b { a } else { b }),
            })
    }
}

/// `W_enc (x − b_dec) + b_enc` for every row of `x`.
pub fn encode_preacts<T: Real>(params: &SaeParams<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    check_shape(
        "encode_preacts input",
        (x.nrows(), params.input_dim()),
        x.dim(),
    )?;
    let centered = &x - &params.b_dec;
    Ok(centered.dot(&params.w_enc.t()) + &params.b_enc)
}

/// Number of entries BatchTopK keeps for a batch.
pub fn selection_budget(k: f64, batch: usize) -> usize {
    (k * batch as f64).round().max(0.0) as usize
}

/// Descending order with NaN sorted last.
fn descending<T: Real>(a: T, b: T) -> Ordering {
    match b.partial_cmp(&a) {
        Some(o) => o,
        None => a.is_nan().cmp(&b.is_nan()),
    }
}

/// Keeps the `round(k · batch)` largest entries of the whole preactivation
/// matrix (ties go to the lower flat index), zeroes the rest and clamps
/// selected negatives to zero.
pub fn batch_topk_select<T: Real>(
    preacts: ArrayView2<T>,
    k: f64,
) -> Result<(Array2<T>, Array2<bool>)> {
    let (batch, h) = preacts.dim();
    let budget = selection_budget(k, batch);
    if budget > batch * h {
        return Err(Error::param(format!(
            "selection budget {budget} exceeds {batch} × {h} entries"
        )));
    }
    let flat: Vec<T> = preacts.iter().copied().collect();
    let mut order: Vec<u32> = (0..flat.len() as u32).collect();
    let rank = |a: &u32, b: &u32| descending(flat[*a as usize], flat[*b as usize]).then(a.cmp(b));
    if budget > 0 && budget < order.len() {
        order.select_nth_unstable_by(budget - 1, rank);
    }

    let mut acts = Array2::<T>::zeros((batch, h));
    let mut mask = Array2::from_elem((batch, h), false);
    let acts_flat = acts.as_slice_mut().expect("standard layout");
    let mask_flat = mask.as_slice_mut().expect("standard layout");
    for &idx in &order[..budget] {
        let i = idx as usize;
        mask_flat[i] = true;
        acts_flat[i] = flat[i].max(T::zero());
    }
    Ok((acts, mask))
}

fn reconstruct<T: Real>(params: &SaeParams<T>, acts: &Array2<T>) -> Array2<T> {
    acts.dot(&params.w_dec.t()) + &params.b_dec
}

fn mean_squared_error<T: Real>(x: ArrayView2<T>, recon: &Array2<T>) -> f64 {
    let batch = x.nrows().max(1) as f64;
    let total: f64 = Zip::from(x)
        .and(recon)
        .fold(0.0, |acc, &a, &b| {
            let d = (a - b).f64();
            acc + d * d
        });
    total / batch
}

/// Training-mode forward pass with BatchTopK selection at `params.k`.
pub fn forward<T: Real>(params: &SaeParams<T>, x: ArrayView2<T>) -> Result<ForwardTrace<T>> {
    let preacts = encode_preacts(params, x)?;
    let (acts, active_mask) = batch_topk_select(preacts.view(), params.k)?;
    let recon = reconstruct(params, &acts);
    let mse = mean_squared_error(x, &recon);
    Ok(ForwardTrace {
        preacts,
        acts,
        active_mask,
        recon,
        mse,
    })
}

/// Per-sample inference: a latent is active iff its preactivation exceeds
/// `params.inference_threshold` (and is positive).
pub fn forward_thresholded<T: Real>(
    params: &SaeParams<T>,
    x: ArrayView2<T>,
) -> Result<ForwardTrace<T>> {
    let preacts = encode_preacts(params, x)?;
    let threshold = params.inference_threshold.max(T::zero());
    let active_mask = preacts.mapv(|p| p > threshold);
    let acts = Zip::from(&preacts)
        .and(&active_mask)
        .map_collect(|&p, &m| if m { p } else { T::zero() });
    let recon = reconstruct(params, &acts);
    let mse = mean_squared_error(x, &recon);
    Ok(ForwardTrace {
        preacts,
        acts,
        active_mask,
        recon,
        mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::init_params;
    use ndarray::{array, Array1, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topk_single_row() {
        let (acts, mask) = batch_topk_select(array![[3.0f64, 1.0, 2.0]].view(), 2.0).unwrap();
        assert_eq!(acts, array![[3.0, 0.0, 2.0]]);
        assert_eq!(mask, array![[true, false, true]]);
    }

    #[test]
    fn topk_budget_spans_the_batch() {
        let (acts, _) = batch_topk_select(array![[5.0f64, 0.1], [4.0, 3.0]].view(), 1.0).unwrap();
        assert_eq!(acts, array![[5.0, 0.0], [4.0, 0.0]]);
    }

    #[test]
    fn topk_clamps_negative_selection() {
        let (acts, mask) = batch_topk_select(array![[-3.0f64, -1.0, -2.0]].view(), 1.0).unwrap();
        assert_eq!(mask, array![[false, true, false]]);
        assert_eq!(acts, array![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn topk_ties_prefer_lower_index() {
        let (_, mask) = batch_topk_select(array![[1.0f64, 1.0], [1.0, 1.0]].view(), 1.0).unwrap();
        assert_eq!(mask, array![[true, true], [false, false]]);
    }

    #[test]
    fn topk_rejects_oversized_budget() {
        assert!(batch_topk_select(array![[1.0f64, 2.0]].view(), 3.0).is_err());
    }

    #[test]
    fn preact_of_own_encoder_row_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params::<f64>(6, 3, 1.0, &mut rng).unwrap();
        let x = p.w_enc.row(2).insert_axis(Axis(0)).to_owned();
        let pre = encode_preacts(&p, x.view()).unwrap();
        assert!((pre[[0, 2]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centered_input_gives_encoder_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = init_params::<f64>(4, 3, 1.0, &mut rng).unwrap();
        p.b_dec = array![0.5, -1.0, 2.0, 0.25];
        p.b_enc = array![0.1, 0.2, 0.3];
        let x = p.b_dec.clone().insert_axis(Axis(0));
        let pre = encode_preacts(&p, x.view()).unwrap();
        for j in 0..3 {
            assert!((pre[[0, j]] - p.b_enc[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = init_params::<f64>(5, 4, 1.0, &mut rng).unwrap();
        p.b_dec = array![0.3, -0.2, 0.1, 0.0, 0.7];
        p.b_enc = array![0.05, -0.05, 0.2, 0.0];
        let x = array![[1.0, 2.0, -1.0, 0.5, 0.0], [0.3, 0.1, 0.2, -0.4, 1.1]];
        let pre = encode_preacts(&p, x.view()).unwrap();
        for r in 0..2 {
            for j in 0..4 {
                let mut s = p.b_enc[j];
                for c in 0..5 {
                    s += p.w_enc[[j, c]] * (x[[r, c]] - p.b_dec[c]);
                }
                assert!((pre[[r, j]] - s).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn encode_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params::<f64>(5, 4, 1.0, &mut rng).unwrap();
        let x = Array2::<f64>::zeros((2, 4));
        assert!(matches!(encode_preacts(&p, x.view()), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_sae_reconstructs_nothing() {
        let p = SaeParams::<f64> {
            w_enc: Array2::zeros((2, 3)),
            w_dec: Array2::zeros((3, 2)),
            b_enc: Array1::zeros(2),
            b_dec: Array1::zeros(3),
            k: 1.0,
            inference_threshold: 0.0,
        };
        let x = array![[1.0, 2.0, 2.0], [0.0, 3.0, 4.0]];
        let t = forward(&p, x.view()).unwrap();
        assert!(t.recon.iter().all(|&v| v == 0.0));
        assert!((t.mse - (9.0 + 25.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_acts_reconstruct_the_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = init_params::<f64>(3, 2, 1.0, &mut rng).unwrap();
        p.b_dec = array![1.0, -2.0, 0.5];
        p.b_enc = array![-10.0, -10.0];
        let x = array![[0.1, 0.2, 0.3]];
        let t = forward(&p, x.view()).unwrap();
        assert!(t.acts.iter().all(|&a| a == 0.0));
        assert_eq!(t.recon.row(0), p.b_dec);
    }

    #[test]
    fn thresholded_forward_respects_cutoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = init_params::<f64>(4, 4, 1.0, &mut rng).unwrap();
        p.w_enc = Array2::eye(4);
        p.w_dec = Array2::eye(4);
        p.inference_threshold = 0.5;
        let x = array![[0.4, 0.6, -1.0, 2.0]];
        let t = forward_thresholded(&p, x.view()).unwrap();
        assert_eq!(t.acts, array![[0.0, 0.6, 0.0, 2.0]]);
    }
}
