//! Poisson-imbedding simulation of Hawkes-type point processes, their
//! normalized functionals, and Wasserstein-1 checks of Gaussian limits.

// NaN must fail every positivity check, so guards are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod driving_measure;
pub mod error;
pub mod functionals;
pub mod model;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod volterra;
pub mod wasserstein;

pub use error::{Error, Result};
