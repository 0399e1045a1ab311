use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{Covariance, Gaussian};

const GRAMMAR: &str = "expected rbf:ls=<float>,var=<float>";

/// Diagonal jitter added to every Gram matrix.
pub const GP_JITTER: f64 = 1e-10;

/// Squared-exponential kernel `s² exp(-‖x - x'‖² / (2ℓ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub lengthscale: f64,
    pub variance: f64,
}

impl RbfKernel {
    pub fn new(lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::invalid(format!("signal variance must be positive, got {variance}")));
        }
        Ok(Self { lengthscale, variance })
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let r2 = (x - y).norm_squared();
        self.variance * (-r2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    pub fn gram(&self, points: &[DVector<f64>]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.variance
            } else {
                self.eval(&points[i], &points[j])
            }
        })
    }
}

impl fmt::Display for RbfKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rbf:ls={},var={}", self.lengthscale, self.variance)
    }
}

impl FromStr for RbfKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::invalid(format!("malformed kernel {s:?} ({why}); {GRAMMAR}"));
        let body = s.trim().strip_prefix("rbf:").ok_or_else(|| bad("unknown kernel"))?;
        let (mut ls, mut var) = (None, None);
        for part in body.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(|| bad("missing '='"))?;
            let value: f64 = value.trim().parse().map_err(|_| bad("not a number"))?;
            let slot = match key.trim() {
                "ls" => &mut ls,
                "var" => &mut var,
                _ => return Err(bad("unknown key")),
            };
            if slot.replace(value).is_some() {
                return Err(bad("repeated key"));
            }
        }
        match (ls, var) {
            (Some(ls), Some(var)) => RbfKernel::new(ls, var).map_err(|e| bad(&e.to_string())),
            _ => Err(bad("both ls and var are required")),
        }
    }
}

/// Zero-mean single-output Gaussian process observed at a finite point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GpTarget {
    pub kernel: RbfKernel,
    pub points: Vec<DVector<f64>>,
}

impl GpTarget {
    pub fn new(kernel: RbfKernel, points: Vec<DVector<f64>>) -> Result<Self> {
        let t = Self { kernel, points };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        let first = self
            .points
            .first()
            .ok_or_else(|| Error::invalid("a GP target needs at least one evaluation point"))?;
        if let Some(p) = self.points.iter().find(|p| p.len() != first.len()) {
            return Err(Error::Dimension {
                expected: first.len(),
                got: p.len(),
                context: "GP evaluation point",
            });
        }
        if self.points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid("non-finite GP evaluation point"));
        }
        Ok(())
    }

    /// The target restricted to a subset of its points.
    pub fn restrict(&self, idx: &[usize]) -> GpTarget {
        GpTarget {
            kernel: self.kernel,
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
        }
    }
}

/// `N(0, K + jitter I)` at the target's points.
///
/// The jitter starts at [`GP_JITTER`] and grows tenfold up to three times
/// until a Cholesky factorisation succeeds.
pub fn gp_realize(target: &GpTarget) -> Result<Gaussian> {
    target.check()?;
    let n = target.points.len();
    let k = target.kernel.gram(&target.points);
    let mut jitter = GP_JITTER;
    for _ in 0..4 {
        let m = &k + DMatrix::identity(n, n) * jitter;
        if Cholesky::new(m.clone()).is_some() {
            return Gaussian::new(DVector::zeros(n), Covariance::Full(m));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "GP Gram matrix is not positive definite even with jitter {:e}",
        jitter / 10.0
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn parses_kernel_strings() {
        let k: RbfKernel = "rbf:ls=0.5,var=1".parse().unwrap();
        assert_eq!(k, RbfKernel::new(0.5, 1.0).unwrap());
        let k: RbfKernel = "rbf:var=2.5, ls=3".parse().unwrap();
        assert_eq!((k.lengthscale, k.variance), (3.0, 2.5));
        assert_eq!(k.to_string().parse::<RbfKernel>().unwrap(), k);
        for bad in ["", "rbf:", "rbf:ls=1", "matern:ls=1,var=1", "rbf:ls=x,var=1", "rbf:ls=1,var=-1", "rbf:ls=1,ls=2,var=1", "rbf:ls=1,var=1,nu=2"] {
            let err = bad.parse::<RbfKernel>().unwrap_err().to_string();
            assert!(err.contains(GRAMMAR), "{bad}: {err}");
        }
    }

    #[test]
    fn single_point() {
        let g = gp_realize(&GpTarget::new(RbfKernel::new(0.5, 1.0).unwrap(), pts(&[0.3])).unwrap()).unwrap();
        assert_eq!(g.cov().get(0, 0), 1.0 + GP_JITTER);
        assert_eq!(g.mean()[0], 0.0);
    }

    #[test]
    fn coincident_points_are_rank_one() {
        let g = gp_realize(&GpTarget::new(RbfKernel::new(0.5, 2.0).unwrap(), pts(&[1.0, 1.0])).unwrap()).unwrap();
        let m = g.cov().to_full();
        let ev = m.symmetric_eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        assert!((hi - 4.0).abs() < 1e-9);
        assert!(lo.abs() < 1e-8);
    }

    #[test]
    fn long_lengthscale_saturates() {
        let x = pts(&[0.0, 0.1, 0.2]);
        let g = gp_realize(&GpTarget::new(RbfKernel::new(1e4, 1.5).unwrap(), x).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.cov().get(i, j) - 1.5).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gram_entries() {
        let k = RbfKernel::new(0.5, 1.0).unwrap();
        let x = pts(&[0.0, 1.0]);
        assert!((k.gram(&x)[(0, 1)] - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn needs_points() {
        assert!(GpTarget::new(RbfKernel::new(1.0, 1.0).unwrap(), vec![]).is_err());
    }
}
