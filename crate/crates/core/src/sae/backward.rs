use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{ForwardTrace, SaeParams};
use crate::error::{check_shape, Result};
use crate::Real;

/// Gradients of the batch MSE, shaped like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real = f32> {
    pub w_enc: Array2<T>,
    pub w_dec: Array2<T>,
    pub b_enc: Array1<T>,
    pub b_dec: Array1<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &SaeParams<T>) -> Self {
        Self {
            w_enc: Array2::zeros(params.w_enc.dim()),
            w_dec: Array2::zeros(params.w_dec.dim()),
            b_enc: Array1::zeros(params.b_enc.dim()),
            b_dec: Array1::zeros(params.b_dec.dim()),
        }
    }

    pub fn all_finite(&self) -> bool {
        let finite = |v: &T| v.is_finite();
        self.w_enc.iter().all(finite)
            && self.w_dec.iter().all(finite)
            && self.b_enc.iter().all(finite)
            && self.b_dec.iter().all(finite)
    }
}

/// Analytic gradients of `trace.mse` with the selection mask held fixed.
///
/// Selected entries with a non-positive preactivation were clamped to zero
/// and pass no gradient.
pub fn backward<T: Real>(
    params: &SaeParams<T>,
    x: ArrayView2<T>,
    trace: &ForwardTrace<T>,
) -> Result<Gradients<T>> {
    let (batch, d) = x.dim();
    let h = params.n_latents();
    check_shape("backward input", (batch, params.input_dim()), (batch, d))?;
    check_shape("backward trace", (batch, h), trace.preacts.dim())?;
    check_shape("backward trace recon", (batch, d), trace.recon.dim())?;

    // d mse / d recon
    let scale = T::of(2.0 / batch as f64);
    let err = (&trace.recon - &x) * scale;

    let grad_w_dec = err.t().dot(&trace.acts);
    let mut grad_pre = err.dot(&params.w_dec);
    Zip::from(&mut grad_pre)
        .and(&trace.active_mask)
        .and(&trace.preacts)
        .for_each(|g, &m, &p| {
            if !m || p <= T::zero() {
                *g = T::zero();
            }
        });

    let centered = &x - &params.b_dec;
    let grad_b_enc = grad_pre.sum_axis(Axis(0));
    let grad_w_enc = grad_pre.t().dot(&centered);
    // b_dec enters the output directly and the encoder through centering.
    let grad_b_dec = err.sum_axis(Axis(0)) - grad_b_enc.dot(&params.w_enc);

    Ok(Gradients {
        w_enc: grad_w_enc,
        w_dec: grad_w_dec,
        b_enc: grad_b_enc,
        b_dec: grad_b_dec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::{forward, init_params};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_reconstruction_has_zero_gradient() {
        let params = SaeParams::<f64> {
            w_enc: Array2::eye(3),
            w_dec: Array2::eye(3),
            b_enc: Array1::zeros(3),
            b_dec: Array1::zeros(3),
            k: 3.0,
            inference_threshold: 0.0,
        };
        let x = array![[1.0, 0.0, 1.2]];
        let trace = forward(&params, x.view()).unwrap();
        let grads = backward(&params, x.view(), &trace).unwrap();
        let max = grads
            .w_enc
            .iter()
            .chain(grads.w_dec.iter())
            .chain(grads.b_enc.iter())
            .chain(grads.b_dec.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-10, "max gradient {max}");
    }

    #[test]
    fn inactive_latent_gets_no_decoder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = init_params::<f64>(5, 4, 1.0, &mut rng).unwrap();
        params.b_enc = array![0.0, 0.0, -100.0, 0.0];
        let x = array![[0.3, -0.2, 0.9, 0.1, 0.4], [0.7, 0.1, -0.5, 0.2, 0.0]];
        let trace = forward(&params, x.view()).unwrap();
        assert!(trace.active_mask.column(2).iter().all(|&m| !m));
        let grads = backward(&params, x.view(), &trace).unwrap();
        assert!(grads.w_dec.column(2).iter().all(|&g| g == 0.0));
        assert!(grads.w_enc.row(2).iter().all(|&g| g == 0.0));
    }
}
