//! Exact probabilistic primitives.

pub mod gaussian;
pub mod linalg;
pub mod normal;
pub mod truncated;

pub use gaussian::{gaussian_w2, gaussian_w2_sq, Covariance, Gaussian, GaussianMixture, GaussianSampler};
pub use linalg::{psd_sqrt, psd_trace_sqrt, spectral_norm, symmetric_eig, EigenBasis};
pub use normal::{std_normal_cdf, std_normal_mass, std_normal_pdf, std_normal_quantile, std_normal_sf};
pub use truncated::{rectified_moments_1d, truncated_moments_1d, Bound, Interval, TruncatedMoments1D};
