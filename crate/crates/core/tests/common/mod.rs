//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use wassnet::snn::{Activation, DeterministicLinear, Layer, SnnModel, StochasticLinear};
use wassnet::{Covariance, Gaussian, GaussianMixture};

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Mean uniform in `[-spread, spread]^d`, covariance `A Aᵀ + floor I`.
pub fn random_gaussian<R: Rng>(rng: &mut R, d: usize, spread: f64, scale: f64) -> Gaussian {
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-spread..=spread));
    if rng.random_bool(0.3) {
        let v = DVector::from_fn(d, |_, _| rng.random_range(0.05..1.0) * scale * scale);
        return Gaussian::new(mean, Covariance::Diag(v)).unwrap();
    }
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng) * scale);
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * (0.05 * scale * scale);
    Gaussian::new(mean, Covariance::Full(cov)).unwrap()
}

pub fn random_gmm<R: Rng>(rng: &mut R, k: usize, d: usize, spread: f64, scale: f64) -> GaussianMixture {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let comps = (0..k).map(|_| random_gaussian(rng, d, spread, scale)).collect();
    GaussianMixture::new(weights, comps).unwrap()
}

/// Squared-Euclidean cost matrix.
pub fn sq_costs(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), ys.len(), |i, j| (&xs[i] - &ys[j]).norm_squared())
}

pub fn second_moment(xs: &[DVector<f64>]) -> f64 {
    xs.iter().map(|x| x.norm_squared()).sum::<f64>() / xs.len() as f64
}

/// Optimal value of the transportation LP by a dense two-phase tableau
/// simplex with Bland's rule.
pub fn lp_transport_oracle(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = cost.shape();
    let nv = m * n;
    // rows: supplies, then all demands but the last (redundant)
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..m {
        let mut r = vec![0.0; nv];
        for j in 0..n {
            r[i * n + j] = 1.0;
        }
        rows.push((r, a[i]));
    }
    for j in 0..n.saturating_sub(1) {
        let mut r = vec![0.0; nv];
        for i in 0..m {
            r[i * n + j] = 1.0;
        }
        rows.push((r, b[j]));
    }
    let c: Vec<f64> = (0..nv).map(|k| cost[(k / n, k % n)]).collect();
    simplex_min(&rows, &c)
}

/// `min cᵀx  s.t.  A x = rhs, x ≥ 0` with `rhs ≥ 0`.
pub fn simplex_min(rows: &[(Vec<f64>, f64)], c: &[f64]) -> f64 {
    const EPS: f64 = 1e-12;
    let nr = rows.len();
    let nv = c.len();
    let width = nv + nr + 1;
    // tableau row-major; artificial variables nv..nv+nr; last column rhs
    let mut t: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(r, (coef, rhs))| {
            let mut row = vec![0.0; width];
            row[..nv].copy_from_slice(coef);
            row[nv + r] = 1.0;
            row[width - 1] = *rhs;
            row
        })
        .collect();
    let mut basis: Vec<usize> = (nv..nv + nr).collect();

    let pivot = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, r: usize, col: usize| {
        let p = t[r][col];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pr = t[r].clone();
        for (k, row) in t.iter_mut().enumerate() {
            if k != r && row[col] != 0.0 {
                let f = row[col];
                for (x, y) in row.iter_mut().zip(&pr) {
                    *x -= f * y;
                }
            }
        }
        basis[r] = col;
    };

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| {
        loop {
            // reduced costs c_j - c_B B^-1 A_j
            let entering = (0..allowed).find(|&j| {
                if basis.contains(&j) {
                    return false;
                }
                let z: f64 = basis.iter().enumerate().map(|(r, &bv)| cost[bv] * t[r][j]).sum();
                cost[j] - z < -EPS
            });
            let Some(col) = entering else { return };
            let mut best: Option<(f64, usize)> = None;
            for r in 0..t.len() {
                if t[r][col] > EPS {
                    let ratio = t[r][width - 1] / t[r][col];
                    let better = match best {
                        None => true,
                        Some((br, bi)) => ratio < br - EPS || (ratio <= br + EPS && basis[r] < basis[bi]),
                    };
                    if better {
                        best = Some((ratio, r));
                    }
                }
            }
            let (_, r) = best.expect("transportation LP is bounded");
            pivot(t, basis, r, col);
        }
    };

    let mut phase1 = vec![0.0; nv + nr];
    for v in phase1.iter_mut().skip(nv) {
        *v = 1.0;
    }
    run(&mut t, &mut basis, &phase1, nv + nr);
    // drive remaining artificials out of the basis
    let mut r = 0;
    while r < t.len() {
        if basis[r] >= nv {
            if let Some(col) = (0..nv).find(|&j| t[r][j].abs() > EPS && !basis.contains(&j)) {
                pivot(&mut t, &mut basis, r, col);
            } else {
                t.remove(r);
                basis.remove(r);
                continue;
            }
        }
        r += 1;
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, nr));
    run(&mut t, &mut basis, &phase2, nv);
    basis.iter().enumerate().map(|(r, &bv)| phase2[bv] * t[r][width - 1]).sum()
}

/// Adaptive Simpson quadrature with a relative tolerance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        // below rounding noise further halving cannot help
        let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        if depth == 0 || delta.abs() <= 15.0 * tol.max(floor) {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    // a coarse pass fixes the absolute tolerance scale
    let panels = 64;
    let h = (b - a) / panels as f64;
    let mut coarse = 0.0;
    for k in 0..panels {
        let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
        coarse += simpson(f, x0, f(x0), x1, f(x1)).2;
    }
    let tol = rel_tol * coarse.abs().max(1e-300);
    let mut total = 0.0;
    for k in 0..panels {
        let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
        let (f0, f1) = (f(x0), f(x1));
        let (m, fm, whole) = simpson(f, x0, f0, x1, f1);
        total += recurse(f, x0, f0, x1, f1, m, fm, whole, tol / panels as f64, 30);
    }
    total
}

pub fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Variational,
    Dropout,
    Mixed,
}

/// Random feed-forward network with `hidden` activation layers.
pub fn random_network<R: Rng>(rng: &mut R, input: usize, widths: &[usize], act: Activation, flavor: Flavor) -> SnnModel {
    let mut dims = vec![input];
    dims.extend_from_slice(widths);
    dims.push(1);
    let mut layers = Vec::new();
    let n_lin = dims.len() - 1;
    for k in 0..n_lin {
        let (i, o) = (dims[k], dims[k + 1]);
        let std = 1.0 / (i as f64).sqrt();
        let w = DMatrix::from_fn(o, i, |_, _| normal(rng) * std);
        let b = DVector::from_fn(o, |_, _| normal(rng) * 0.1);
        let variational = match flavor {
            Flavor::Variational => true,
            Flavor::Dropout => false,
            Flavor::Mixed => k % 2 == 0,
        };
        if k > 0 && !variational {
            layers.push(Layer::Dropout {
                keep_prob: rng.random_range(0.6..0.95),
            });
        }
        if variational {
            layers.push(Layer::StochasticLinear(StochasticLinear {
                weight_mean: w,
                weight_var: DMatrix::from_fn(o, i, |_, _| rng.random_range(0.001..0.03)),
                bias_mean: b,
                bias_var: DVector::from_fn(o, |_, _| rng.random_range(0.001..0.03)),
                ntk: false,
            }));
        } else {
            layers.push(Layer::DeterministicLinear(DeterministicLinear { weight: w, bias: b }));
        }
        if k + 1 < n_lin {
            layers.push(Layer::Activation(act));
        }
    }
    SnnModel::new(input, layers).unwrap()
}
