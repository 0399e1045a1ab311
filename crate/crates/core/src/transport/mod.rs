//! Exact discrete optimal transport, MW2 between mixtures, empirical W2.

mod assignment;

mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::config::TOL;
use crate::error::{Error, Result};
use crate::stats::gaussian::{matrix_to_rows, W2Prep};
use crate::stats::GaussianMixture;

/// An optimal coupling and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    pub cost: f64,
}

impl Serialize for TransportPlan {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            plan: Vec<Vec<f64>>,
            cost: f64,
        }
        Repr {
            plan: matrix_to_rows(&self.plan),
            cost: self.cost,
        }
        .serialize(s)
    }
}

fn check_marginal(w: &[f64], name: &str) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::invalid(format!("{name} marginal is empty")));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!("{name} marginal must be finite and nonnegative")));
    }
    Ok(w.iter().sum())
}

/// Exact solution of `min <P, C>` over couplings of `a` and `b`.
///
/// Zero-mass atoms are removed before solving and come back as zero rows
/// and columns of the plan.
pub fn solve_discrete_ot(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    if a.len() != m || b.len() != n {
        return Err(Error::Dimension {
            expected: m * n,
            got: a.len() * b.len(),
            context: "cost matrix shape must match the marginals",
        });
    }
    let sa = check_marginal(a, "source")?;
    let sb = check_marginal(b, "target")?;
    if (sa - sb).abs() > TOL.marginal {
        return Err(Error::InfeasibleMarginals {
            source_mass: sa,
            target_mass: sb,
        });
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("transport costs must be finite and nonnegative"));
    }
    let rows: Vec<usize> = (0..m).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| b[j] > 0.0).collect();
    let mut plan = DMatrix::zeros(m, n);
    if rows.is_empty() || cols.is_empty() {
        return Ok(TransportPlan { plan, cost: 0.0 });
    }
    let sub_cost: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost[(i, j)]))
        .collect();
    let ra: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let rb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let flows = solve_flat(&sub_cost, &ra, &rb)?;
    let k = cols.len();
    for (ri, &i) in rows.iter().enumerate() {
        for (ci, &j) in cols.iter().enumerate() {
            plan[(i, j)] = flows[ri * k + ci];
        }
    }
    let total = plan.component_mul(cost).sum();
    Ok(TransportPlan { plan, cost: total })
}

/// Network simplex on a row-major cost matrix with strictly positive marginals.
pub(crate) fn solve_flat(cost: &[f64], a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (a.len(), b.len());
    if m == 1 || n == 1 {
        // The coupling is forced.
        return Ok(if m == 1 { b.to_vec() } else { a.to_vec() });
    }
    let max_pivots = 50 * (m * n + m + n) + 10_000;
    simplex::NetworkSimplex::new(cost, a, b, TOL.simplex).run(max_pivots)
}

/// Mixture Wasserstein distance: exact OT over pairwise Gaussian W2² costs.
pub fn mw2(p: &GaussianMixture, q: &GaussianMixture) -> Result<(f64, TransportPlan)> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
            context: "mw2 operands",
        });
    }
    let (m, n) = (p.len(), q.len());
    let mut cost = DMatrix::zeros(m, n);
    for (i, pc) in p.components().iter().enumerate() {
        if p.weights()[i] == 0.0 {
            continue;
        }
        let prep = W2Prep::new(pc)?;
        for (j, qc) in q.components().iter().enumerate() {
            if q.weights()[j] > 0.0 {
                cost[(i, j)] = prep.w2_sq(qc)?;
            }
        }
    }
    let plan = solve_discrete_ot(&cost, p.weights(), q.weights())?;
    Ok((plan.cost.max(0.0).sqrt(), plan))
}

/// Empirical W2 together with a Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalW2 {
    pub w2: f64,
    pub w2sq: f64,
    /// Standard error of `w2sq` from the spread of matched costs.
    pub w2sq_std_error: f64,
    /// Delta-method standard error of `w2`.
    pub std_error: f64,
    pub n_x: usize,
    pub n_y: usize,
}

fn sq_norms(xs: &[DVector<f64>]) -> Vec<f64> {
    xs.iter().map(|x| x.norm_squared()).collect()
}

/// Squared Euclidean costs in expanded form, clamped at zero.
fn sq_cost_matrix(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Vec<f64> {
    let (nx, ny) = (sq_norms(xs), sq_norms(ys));
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for (x, &ax) in xs.iter().zip(&nx) {
        for (y, &ay) in ys.iter().zip(&ny) {
            out.push((ax + ay - 2.0 * x.dot(y)).max(0.0));
        }
    }
    out
}

/// Centres a point cloud and scales it to unit root-mean-square radius.
fn standardize(xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = xs.len() as f64;
    let mean = xs.iter().fold(DVector::zeros(xs[0].len()), |acc, x| acc + x) / n;
    let rms = (xs.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / n).sqrt();
    let s = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    xs.iter().map(|x| (x - &mean) * s).collect()
}

/// Exact W2 between the uniform empirical measures on `xs` and `ys`.
pub fn empirical_w2(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<f64> {
    Ok(empirical_w2_with_cap(xs, ys, TOL.empirical_cost_cap)?.w2)
}

/// [`empirical_w2`] with an explicit cap on the number of cost entries.
///
/// Equal sample sizes are solved as an assignment problem; unequal sizes
/// by the network simplex. The standard error treats the per-sample matched
/// costs as i.i.d. draws.
pub fn empirical_w2_with_cap(xs: &[DVector<f64>], ys: &[DVector<f64>], cap: usize) -> Result<EmpiricalW2> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::invalid("empirical_w2 needs nonempty sample sets"));
    }
    let d = xs[0].len();
    if let Some(bad) = xs.iter().chain(ys).find(|v| v.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.len(),
            context: "empirical_w2 samples",
        });
    }
    let entries = xs.len().saturating_mul(ys.len());
    if entries > cap {
        return Err(Error::TooLarge { entries, cap });
    }
    let (m, n) = (xs.len(), ys.len());
    // Per-source-sample transport cost, normalised by the sample's mass.
    let per_sample: Vec<f64> = if m == n && d == 1 {
        // Monotone rearrangement is optimal on the line.
        let mut a: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let mut b: Vec<f64> = ys.iter().map(|y| y[0]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).collect()
    } else if m == n {
        // The optimal permutation maximises Σ xᵢ·y_σ(i), which is unchanged by
        // translating or positively rescaling either set; standardised
        // clouds give far better sparse candidates.
        let rows = assignment::SqEuclid::new(&standardize(xs), &standardize(ys));
        let assign = assignment::lap(&rows, 32);
        assign.iter().enumerate().map(|(i, &j)| (&xs[i] - &ys[j]).norm_squared()).collect()
    } else {
        let cost = sq_cost_matrix(xs, ys);
        let a = vec![1.0 / m as f64; m];
        let b = vec![1.0 / n as f64; n];
        let flows = solve_flat(&cost, &a, &b)?;
        (0..m)
            .map(|i| (0..n).map(|j| flows[i * n + j] * cost[i * n + j]).sum::<f64>() * m as f64)
            .collect()
    };
    let k = per_sample.len() as f64;
    let w2sq = (per_sample.iter().sum::<f64>() / k).max(0.0);
    let var = if per_sample.len() > 1 {
        per_sample.iter().map(|c| (c - w2sq).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let se_sq = (var / k).sqrt();
    let w2 = w2sq.sqrt();
    let std_error = if w2 > 0.0 { se_sq / (2.0 * w2) } else { se_sq.sqrt() };
    Ok(EmpiricalW2 {
        w2,
        w2sq,
        w2sq_std_error: se_sq,
        std_error,
        n_x: m,
        n_y: n,
    })
}

/// `w2 / sqrt(E_ref ‖x‖²)`.
pub fn relative_w2(w2_value: f64, reference: &GaussianMixture) -> Result<f64> {
    let m2 = reference.second_moment();
    if !(m2 > 0.0) {
        return Err(Error::Numerical("reference mixture has zero second moment".into()));
    }
    Ok(w2_value / m2.sqrt())
}
