//! Moments of truncated and rectified univariate Gaussians.

use serde::{Deserialize, Serialize};

use super::normal::{std_normal_cdf, std_normal_mass, std_normal_pdf, std_normal_sf};
use crate::config::TOL;
use crate::error::{Error, Result};

/// A point of the extended real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Bound {
    pub fn value(self) -> f64 {
        match self {
            Bound::NegInf => f64::NEG_INFINITY,
            Bound::Finite(x) => x,
            Bound::PosInf => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Bound::Finite(_))
    }
}

impl From<f64> for Bound {
    fn from(x: f64) -> Self {
        if x == f64::INFINITY {
            Bound::PosInf
        } else if x == f64::NEG_INFINITY {
            Bound::NegInf
        } else {
            Bound::Finite(x)
        }
    }
}

/// A closed interval `[lo, hi]` over the extended reals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Bound,
    pub hi: Bound,
}

impl Interval {
    pub fn new(lo: impl Into<Bound>, hi: impl Into<Bound>) -> Result<Self> {
        let (lo, hi) = (lo.into(), hi.into());
        if lo.value().is_nan() || hi.value().is_nan() || lo.value() >= hi.value() {
            return Err(Error::invalid(format!(
                "interval requires lo < hi, got [{}, {}]",
                lo.value(),
                hi.value()
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn real_line() -> Self {
        Self {
            lo: Bound::NegInf,
            hi: Bound::PosInf,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo.value(), self.hi.value())
    }
}

/// Mass, mean and variance of `N(mu, var)` conditioned on an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMoments1D {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Truncated moments of the standard normal on `[a, b]`.
///
/// Returns `(mass, mean, variance)`; `a` and `b` may be infinite.
pub(crate) fn std_truncated(a: f64, b: f64) -> (f64, f64, f64) {
    let mass = std_normal_mass(a, b);
    if mass == 0.0 {
        return (0.0, 0.5 * (a.max(-1e300) + b.min(1e300)), 0.0);
    }
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    let apa = if a.is_finite() { a * pa } else { 0.0 };
    let bpb = if b.is_finite() { b * pb } else { 0.0 };
    let lambda = (pa - pb) / mass;
    let mean = lambda.clamp(a, b);
    let var = (1.0 + (apa - bpb) / mass - lambda * lambda).max(0.0);
    (mass, mean, var)
}

/// Probability, conditional mean and conditional variance of `N(mu, var)`
/// restricted to `interval`.
///
/// Fails with [`Error::NegligibleMass`] when the interval carries less
/// than `1e-300` probability, so callers can drop the cell.
pub fn truncated_moments_1d(mu: f64, var: f64, interval: Interval) -> Result<TruncatedMoments1D> {
    if !(var > 0.0) || !mu.is_finite() || !var.is_finite() {
        return Err(Error::invalid(format!(
            "truncated moments need finite mu and var > 0 (mu={mu}, var={var})"
        )));
    }
    let sigma = var.sqrt();
    let (lo, hi) = interval.bounds();
    let (mass, m, v) = std_truncated((lo - mu) / sigma, (hi - mu) / sigma);
    if mass < TOL.negligible_mass {
        return Err(Error::NegligibleMass { mass });
    }
    Ok(TruncatedMoments1D {
        mass,
        mean: (mu + sigma * m).clamp(lo, hi),
        variance: var * v,
    })
}

/// First and second moment of `min(max(Z, lo), hi)` for `Z ~ N(mu, var)`.
///
/// The clipped variable has atoms at the finite bounds plus the truncated
/// interior; bounds may be infinite, in which case that atom vanishes.
pub fn rectified_moments_1d(mu: f64, var: f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !(lo < hi) {
        return Err(Error::invalid(format!(
            "rectification requires lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(var > 0.0) {
        return Err(Error::invalid(format!("rectification needs var > 0, got {var}")));
    }
    let sigma = var.sqrt();
    let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
    let below = std_normal_cdf(a);
    let above = std_normal_sf(b);
    let (mut first, mut second) = (0.0, 0.0);
    if lo.is_finite() {
        first += lo * below;
        second += lo * lo * below;
    }
    if hi.is_finite() {
        first += hi * above;
        second += hi * hi * above;
    }
    let (mass, m, v) = std_truncated(a, b);
    if mass > 0.0 {
        let mean = mu + sigma * m;
        first += mass * mean;
        second += mass * (var * v + mean * mean);
    }
    Ok((first, second))
}
