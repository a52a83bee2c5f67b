//! A laboratory for studying how the sparsity level `k` (the L0) of a
//! BatchTopK sparse autoencoder decides whether it recovers the true features
//! of its training distribution.
//!
//! The crate is organised bottom-up:
//!
//! - [`toy_data`] builds a synthetic world of orthonormal features that fire
//!   with correlated, per-feature probabilities.
//! - [`sae`] is the BatchTopK SAE itself: forward pass, analytic gradients,
//!   Adam, unit-norm decoder maintenance and the training loop.
//! - [`metrics`] holds the N-th decoder projection score, decoder/feature
//!   alignment and reconstruction measures.
//! - [`control`] decides how `k` moves during training: fixed, linear
//!   transitions, or the automatic controller that descends the decoder
//!   projection score.
//! - [`experiments`] wires everything into sweeps, comparisons, file formats
//!   and plots.

pub mod control;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod sae;
pub mod toy_data;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating point element type used by the SAE. Training runs in `f32`;
/// gradient checks run the same code in `f64`.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
