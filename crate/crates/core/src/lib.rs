//! Weak variance-alpha-gamma (WVAG) bivariate Lévy model.
//!
//! Characteristic functions, Fourier-inversion densities, exact simulation,
//! and three calibration routes (method of moments, maximum likelihood,
//! digital moment estimation) with goodness-of-fit diagnostics.

pub mod charfn;
pub mod dme;
pub mod error;
pub mod fit;
pub mod gof;
pub mod inversion;
pub mod io;
pub mod loess;
pub mod mle;
pub mod model;
pub mod moments;
pub mod optim;
pub mod par;
pub mod scalar;
pub mod simulate;
pub mod special;
pub mod study;

pub use error::{Error, Result};
pub use model::{Constraints, ModelKind, SymMatrix, VgParams, WvagParams};

/// Double-precision parameter set, the type used by all numerical routines.
pub type Params = WvagParams<f64>;
/// Single-precision parameter set.
pub type Params32 = WvagParams<f32>;
/// Exact rational parameter set for closed-form identities.
pub type ExactParams = WvagParams<num_rational::Rational64>;
