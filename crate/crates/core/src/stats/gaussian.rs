//! Gaussian and Gaussian-mixture value types.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::{psd_sqrt, psd_trace_sqrt, symmetric_eig};
use crate::config::TOL;
use crate::error::{Error, Result};

/// Covariance of a Gaussian, either as a variance vector or a full matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diag(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Covariance::Diag(DVector::zeros(n))
    }

    pub fn trace(&self) -> f64 {
        match self {
            Covariance::Diag(v) => v.sum(),
            Covariance::Full(m) => m.trace(),
        }
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diag(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Covariance::Diag(v) => v.iter().all(|&x| x == 0.0),
            Covariance::Full(m) => m.iter().all(|&x| x == 0.0),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Covariance::Diag(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
            Covariance::Full(m) => m[(i, j)],
        }
    }
}

/// A (possibly degenerate) multivariate normal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: Covariance,
}

impl Gaussian {
    /// Validates symmetry and positive semidefiniteness; eigenvalues within
    /// `1e-10 * lambda_max` below zero are clipped.
    pub fn new(mean: DVector<f64>, cov: Covariance) -> Result<Self> {
        let n = mean.len();
        if cov.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: cov.dim(),
                context: "covariance does not match mean",
            });
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite mean"));
        }
        let cov = match cov {
            Covariance::Diag(v) => {
                if v.iter().any(|&x| !x.is_finite() || x < 0.0) {
                    return Err(Error::invalid("variances must be finite and nonnegative"));
                }
                Covariance::Diag(v)
            }
            Covariance::Full(m) => {
                if m.ncols() != n {
                    return Err(Error::invalid("covariance matrix is not square"));
                }
                let scale = m.amax();
                for i in 0..n {
                    for j in 0..i {
                        if (m[(i, j)] - m[(j, i)]).abs() > TOL.symmetry * scale.max(f64::MIN_POSITIVE) {
                            return Err(Error::invalid(format!(
                                "covariance is not symmetric at ({i}, {j})"
                            )));
                        }
                    }
                }
                let basis = symmetric_eig(&m, TOL.degeneracy)?;
                let raw_min = (0..n).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min);
                if basis.eigenvalues.iter().any(|&l| l == 0.0) && raw_min < 0.0 {
                    Covariance::Full(basis.reconstruct())
                } else {
                    Covariance::Full((&m + m.transpose()) * 0.5)
                }
            }
        };
        Ok(Self { mean, cov })
    }

    /// Constructor for covariances that are PSD by construction.
    pub(crate) fn new_unchecked(mean: DVector<f64>, cov: Covariance) -> Self {
        debug_assert_eq!(mean.len(), cov.dim());
        Self { mean, cov }
    }

    pub fn dirac(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: Covariance::zeros(n),
        }
    }

    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, Covariance::Diag(DVector::from_element(n, var)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    /// `E‖x‖² = ‖m‖² + tr Σ`.
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.cov.trace()
    }

    /// A reusable sampler; factorises the covariance once.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        let factor = match &self.cov {
            Covariance::Diag(v) => Factor::Diag(v.map(f64::sqrt)),
            Covariance::Full(m) => {
                let basis = symmetric_eig(m, TOL.degeneracy)?;
                Factor::Full(basis.scaled_axes())
            }
        };
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            factor,
        })
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: Factor,
}

impl GaussianSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.factor {
            Factor::Diag(s) => DVector::from_fn(self.mean.len(), |i, _| {
                let z: f64 = rng.sample(StandardNormal);
                self.mean[i] + s[i] * z
            }),
            Factor::Full(l) => {
                let z = DVector::from_fn(l.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.mean + l * z
            }
        }
    }
}

/// A finite mixture of Gaussians with simplex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

/// Checks nonnegativity and the sum of `weights`, then rescales them to sum to one.
pub(crate) fn normalize_simplex(weights: &mut [f64]) -> Result<()> {
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    let slack = TOL.simplex * (weights.len().max(1) as f64);
    if (total - 1.0).abs() > slack {
        return Err(Error::invalid(format!("weights sum to {total}, not 1")));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(())
}

impl GaussianMixture {
    pub fn new(mut weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::Dimension {
                expected: components.len(),
                got: weights.len(),
                context: "one weight per mixture component",
            });
        }
        let n = components[0].dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.dim(),
                context: "mixture components must share a dimension",
            });
        }
        normalize_simplex(&mut weights)?;
        Ok(Self {
            weights,
            components,
        })
    }

    /// Builds a mixture from weights that only need rescaling (internal use).
    pub(crate) fn from_unnormalized(mut weights: Vec<f64>, components: Vec<Gaussian>) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            weights,
            components,
        }
    }

    pub fn single(g: Gaussian) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![g],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Gaussian)> {
        self.weights.iter().copied().zip(self.components.iter())
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (w, c) in self.iter() {
            m.axpy(w, c.mean(), 1.0);
        }
        m
    }

    /// Overall covariance: within-component plus between-component spread.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let n = self.dim();
        let mut s = DMatrix::zeros(n, n);
        for (w, c) in self.iter() {
            match c.cov() {
                Covariance::Diag(v) => {
                    for i in 0..n {
                        s[(i, i)] += w * v[i];
                    }
                }
                Covariance::Full(m) => s += m * w,
            }
            let d = c.mean() - &mu;
            s.ger(w, &d, &d, 1.0);
        }
        s
    }

    /// `Σᵢ πᵢ (‖mᵢ‖² + tr Σᵢ)`.
    pub fn second_moment(&self) -> f64 {
        self.iter().map(|(w, c)| w * c.second_moment()).sum()
    }

    /// Draws `n` i.i.d. samples.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        let samplers = self
            .components
            .iter()
            .map(Gaussian::sampler)
            .collect::<Result<Vec<_>>>()?;
        let mut cumulative = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let last = self
            .weights
            .iter()
            .rposition(|&w| w > 0.0)
            .unwrap_or(self.len() - 1);
        Ok((0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let k = cumulative.partition_point(|&c| c <= u).min(last);
                samplers[k].sample(rng)
            })
            .collect())
    }
}

/// Squared 2-Wasserstein distance between two Gaussians (Gelbrich formula).
pub fn gaussian_w2_sq(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    W2Prep::new(a)?.w2_sq(b)
}

/// 2-Wasserstein distance between two Gaussians.
pub fn gaussian_w2(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    Ok(gaussian_w2_sq(a, b)?.sqrt())
}

/// One side of the Gaussian W2 formula with its matrix square root cached,
/// for evaluating many distances against the same Gaussian.
pub(crate) struct W2Prep<'a> {
    g: &'a Gaussian,
    root: Option<DMatrix<f64>>,
}

impl<'a> W2Prep<'a> {
    pub(crate) fn new(g: &'a Gaussian) -> Result<Self> {
        let root = match g.cov() {
            Covariance::Full(m) => Some(psd_sqrt(m)?),
            Covariance::Diag(_) => None,
        };
        Ok(Self { g, root })
    }

    pub(crate) fn w2_sq(&self, other: &Gaussian) -> Result<f64> {
        let a = self.g;
        let b = other;
        if a.dim() != b.dim() {
            return Err(Error::Dimension {
                expected: a.dim(),
                got: b.dim(),
                context: "gaussian_w2 operands",
            });
        }
        if a == b {
            return Ok(0.0);
        }
        let shift = (a.mean() - b.mean()).norm_squared();
        let bures = match (a.cov(), b.cov()) {
            (Covariance::Diag(x), Covariance::Diag(y)) => x
                .iter()
                .zip(y.iter())
                .map(|(p, q)| (p.sqrt() - q.sqrt()).powi(2))
                .sum(),
            (ca, cb) if ca.is_zero() => cb.trace(),
            (ca, cb) if cb.is_zero() => ca.trace(),
            (Covariance::Diag(x), Covariance::Full(m)) => {
                let r = x.map(f64::sqrt);
                let inner = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| r[i] * m[(i, j)] * r[j]);
                x.sum() + m.trace() - 2.0 * psd_trace_sqrt(&inner)?
            }
            (Covariance::Full(_), cb) => {
                let r = self.root.as_ref().expect("full covariance has a cached root");
                let inner = match cb {
                    Covariance::Diag(y) => {
                        DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| {
                            (0..r.ncols()).map(|k| r[(i, k)] * y[k] * r[(k, j)]).sum()
                        })
                    }
                    Covariance::Full(m) => r * m * r,
                };
                a.cov().trace() + cb.trace() - 2.0 * psd_trace_sqrt(&inner)?
            }
        };
        let total = shift + bures;
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite Gaussian W2".into()));
        }
        Ok(total.max(0.0))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CovRepr {
    Diag(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: CovRepr,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], context: &'static str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::Dimension {
            expected: c,
            got: bad.len(),
            context,
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|row| row.iter().copied().collect()).collect()
}

impl TryFrom<GaussianRepr> for Gaussian {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        let mean = DVector::from_vec(r.mean);
        let cov = match r.cov {
            CovRepr::Diag(v) => Covariance::Diag(DVector::from_vec(v)),
            CovRepr::Full(rows) => Covariance::Full(matrix_from_rows(&rows, "covariance rows")?),
        };
        Gaussian::new(mean, cov)
    }
}

impl From<Gaussian> for GaussianRepr {
    fn from(g: Gaussian) -> Self {
        let cov = match g.cov {
            Covariance::Diag(v) => CovRepr::Diag(v.as_slice().to_vec()),
            Covariance::Full(m) => CovRepr::Full(matrix_to_rows(&m)),
        };
        GaussianRepr {
            mean: g.mean.as_slice().to_vec(),
            cov,
        }
    }
}

impl TryFrom<MixtureRepr> for GaussianMixture {
    type Error = Error;

    fn try_from(r: MixtureRepr) -> Result<Self> {
        GaussianMixture::new(r.weights, r.components)
    }
}

impl From<GaussianMixture> for MixtureRepr {
    fn from(g: GaussianMixture) -> Self {
        MixtureRepr {
            weights: g.weights,
            components: g.components,
        }
    }
}
