//! Gaussian-mixture approximations of stochastic neural networks with
//! certified 2-Wasserstein error bounds.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod mixture;
pub mod prior;
pub mod quantizer;
pub mod snn;
pub mod stats;
pub mod transport;

pub use config::{Tolerances, TOL};
pub use error::{Error, Result};
pub use stats::{Covariance, Gaussian, GaussianMixture};
