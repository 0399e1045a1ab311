//! Fitting mean-field weight priors to a Gaussian-process target.

mod gp;
mod params;
mod tune;

pub use gp::{gp_realize, GpTarget, RbfKernel, GP_JITTER};
pub use params::{Granularity, PriorParams};
pub use tune::{gradient, relative_estimates, tune, tune_loss, LossParts, RelativeW2, TuneOptions, TuneReport};
