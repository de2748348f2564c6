//! GLM-EP for `y = f(Ax)` with orthogonally invariant sensing matrices, its
//! state-evolution predictor, and spectrum-design tools.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoiser;
pub mod error;
pub mod nonlinearity;
pub mod quadrature;
pub mod sensing_operator;
pub mod solver;
pub mod special;
pub mod spectrum;
pub mod state_evolution;

pub use error::{Error, Result};
pub use nonlinearity::PiecewiseFunction;
pub use spectrum::Spectrum;
