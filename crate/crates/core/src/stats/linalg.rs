//! Symmetric eigendecomposition and the matrix functions built on it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::config::TOL;
use crate::error::{Error, Result};

/// Eigenbasis of a symmetric PSD matrix, eigenvalues sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// Number of eigenvalues above `threshold * lambda_max`.
    pub rank: usize,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        if self.eigenvalues.is_empty() {
            0.0
        } else {
            self.eigenvalues[0]
        }
    }

    /// `V_r diag(sqrt(lambda_r))`: maps whitened coordinates of the
    /// non-degenerate subspace back to centred original coordinates.
    pub fn scaled_axes(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, self.rank);
        for j in 0..self.rank {
            let s = self.eigenvalues[j].sqrt();
            for i in 0..n {
                out[(i, j)] = self.eigenvectors[(i, j)] * s;
            }
        }
        out
    }

    /// Whitening map `diag(lambda_r)^(-1/2) V_rᵀ` restricted to the
    /// non-degenerate subspace.
    pub fn whitening(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(self.rank, n);
        for j in 0..self.rank {
            let s = 1.0 / self.eigenvalues[j].sqrt();
            for i in 0..n {
                out[(j, i)] = self.eigenvectors[(i, j)] * s;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted nonincreasing.
///
/// Eigenvalues within `1e-10 * |lambda|_max` below zero are clipped to 0,
/// larger negative values are rejected. Each eigenvector is signed so that
/// its first (near-)largest entry is positive, which makes the basis
/// reproducible across equivalent inputs. `rank` counts eigenvalues above
/// `degeneracy_threshold * lambda_max`.
pub fn symmetric_eig(cov: &DMatrix<f64>, degeneracy_threshold: f64) -> Result<EigenBasis> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: cov.ncols(),
            context: "symmetric_eig needs a square matrix",
        });
    }
    if n == 0 {
        return Ok(EigenBasis {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
            rank: 0,
        });
    }
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite entry in symmetric matrix".into()));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = decoupled_eigen(&sym).ok_or_else(|| Error::EigenFailure {
        rows: n,
        cols: n,
        matrix: cov.as_slice().to_vec(),
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut eigenvalues = DVector::zeros(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let mut lambda = eig.eigenvalues[src];
        if lambda < 0.0 {
            if lambda < -TOL.degeneracy * scale {
                return Err(Error::Numerical(format!(
                    "matrix is not positive semidefinite (eigenvalue {lambda:e}, scale {scale:e})"
                )));
            }
            lambda = 0.0;
        }
        eigenvalues[k] = lambda;
        let col = eig.eigenvectors.column(src);
        let vmax = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let pivot = col
            .iter()
            .position(|x| x.abs() >= vmax * (1.0 - 1e-8))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        eigenvectors.set_column(k, &(col * sign));
    }
    let lmax = eigenvalues[0];
    let rank = if lmax > 0.0 {
        eigenvalues
            .iter()
            .take_while(|&&l| l > degeneracy_threshold * lmax)
            .count()
    } else {
        0
    };
    Ok(EigenBasis {
        eigenvalues,
        eigenvectors,
        rank,
    })
}

/// Index sets of the diagonal blocks of a symmetric matrix after the
/// permutation that groups coupled coordinates (exact zeros decouple).
fn coupled_blocks(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for j in 0..n {
        for i in 0..j {
            if m[(i, j)] != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Unsorted eigendecomposition that solves decoupled blocks separately.
fn decoupled_eigen(sym: &DMatrix<f64>) -> Option<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = sym.nrows();
    let dense = |m: DMatrix<f64>| {
        let k = m.nrows();
        SymmetricEigen::try_new(m, f64::EPSILON, 1000 * k.max(10))
    };
    let groups = coupled_blocks(sym);
    if groups.len() == 1 {
        return dense(sym.clone());
    }
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    let mut col = 0;
    for g in &groups {
        let block = DMatrix::from_fn(g.len(), g.len(), |a, b| sym[(g[a], g[b])]);
        let e = dense(block)?;
        for t in 0..g.len() {
            values[col] = e.eigenvalues[t];
            for (a, &i) in g.iter().enumerate() {
                vectors[(i, col)] = e.eigenvectors[(a, t)];
            }
            col += 1;
        }
    }
    Some(SymmetricEigen {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Eigenvalues only, block by block.
fn decoupled_eigenvalues(sym: &DMatrix<f64>) -> Vec<f64> {
    let groups = coupled_blocks(sym);
    if groups.len() == 1 {
        return sym.symmetric_eigenvalues().iter().copied().collect();
    }
    groups
        .iter()
        .flat_map(|g| {
            let block = DMatrix::from_fn(g.len(), g.len(), |a, b| sym[(g[a], g[b])]);
            block.symmetric_eigenvalues().iter().copied().collect::<Vec<_>>()
        })
        .collect()
}

/// Principal square root of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let basis = symmetric_eig(m, TOL.degeneracy)?;
    let root = basis.eigenvalues.map(f64::sqrt);
    let v = &basis.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&root) * v.transpose())
}

/// `trace(sqrt(m))` for a symmetric PSD matrix, from its eigenvalues only.
pub fn psd_trace_sqrt(m: &DMatrix<f64>) -> Result<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let ev = decoupled_eigenvalues(&sym);
    if ev.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue in matrix square root".into()));
    }
    let scale = ev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut acc = 0.0;
    for &l in ev.iter() {
        if l < -1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "square root of a matrix with eigenvalue {l:e}"
            )));
        }
        acc += l.max(0.0).sqrt();
    }
    Ok(acc)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
}
