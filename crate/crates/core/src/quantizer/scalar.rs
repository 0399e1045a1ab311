//! Optimal N-level quantizer of the standard normal and its lookup table.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::config::TOL;
use crate::error::{Error, Result};
use crate::stats::normal::{std_normal_pdf, std_normal_quantile};
use crate::stats::truncated::std_truncated;

pub const TABLE_VERSION: u32 = 1;
pub const DEFAULT_TABLE_SIZE: usize = 512;

/// Optimal quantizer of `N(0, 1)` with `N` levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizer1D {
    pub locations: Vec<f64>,
    pub w2sq: f64,
}

impl Quantizer1D {
    pub fn size(&self) -> usize {
        self.locations.len()
    }

    /// Voronoi midpoints between consecutive locations.
    pub fn boundaries(&self) -> Vec<f64> {
        self.locations.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Cell `i` as `(lo, hi)`, with infinite outer edges.
    pub fn cell(&self, i: usize) -> (f64, f64) {
        let c = &self.locations;
        let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (c[i - 1] + c[i]) };
        let hi = if i + 1 == c.len() { f64::INFINITY } else { 0.5 * (c[i] + c[i + 1]) };
        (lo, hi)
    }

    /// Per-cell `(mass, mean, variance)` of the standard normal.
    pub fn cell_moments(&self) -> Vec<(f64, f64, f64)> {
        (0..self.size())
            .map(|i| {
                let (lo, hi) = self.cell(i);
                std_truncated(lo, hi)
            })
            .collect()
    }
}

fn cell_stats(c: &[f64]) -> Vec<(f64, f64, f64)> {
    let n = c.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (c[i - 1] + c[i]) };
            let hi = if i + 1 == n { f64::INFINITY } else { 0.5 * (c[i] + c[i + 1]) };
            std_truncated(lo, hi)
        })
        .collect()
}

fn distortion(c: &[f64], stats: &[(f64, f64, f64)]) -> f64 {
    c.iter()
        .zip(stats)
        .map(|(&ci, &(p, mu, var))| p * (var + (mu - ci) * (mu - ci)))
        .sum()
}

fn symmetrize(c: &mut [f64]) {
    let n = c.len();
    for i in 0..n / 2 {
        let v = 0.5 * (c[n - 1 - i] - c[i]);
        c[i] = -v;
        c[n - 1 - i] = v;
    }
    if n % 2 == 1 {
        c[n / 2] = 0.0;
    }
}

/// Solves `diag(b) + sub/super diagonals` by the Thomas algorithm.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return None;
    }
    c[0] = if n > 1 { sup[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c[i - 1];
        if denom.abs() < 1e-300 {
            return None;
        }
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Lloyd-Max quantizer of `N(0, 1)` with `n` levels.
///
/// Iterates the centroid map `c -> E[Z | Z in cell(c)]` to its fixed point.
/// Each sweep tries a Newton step on `c - T(c)` using the tridiagonal
/// Jacobian of the map and falls back to the plain centroid update when
/// that step does not shrink the residual. Locations are symmetrized after
/// every sweep. Stops once the largest location change is below `tol`.
pub fn solve_quantizer_1d(n: usize, tol: f64, max_iters: usize) -> Result<Quantizer1D> {
    if n == 0 {
        return Err(Error::invalid("quantizer size must be at least 1"));
    }
    if n == 1 {
        return Ok(Quantizer1D {
            locations: vec![0.0],
            w2sq: 1.0,
        });
    }
    let mut c: Vec<f64> = (0..n)
        .map(|i| 3f64.sqrt() * std_normal_quantile((i as f64 + 0.5) / n as f64))
        .collect();
    symmetrize(&mut c);

    let residual = |c: &[f64], stats: &[(f64, f64, f64)]| {
        c.iter()
            .zip(stats)
            .map(|(&ci, s)| (ci - s.1).abs())
            .fold(0.0f64, f64::max)
    };

    let mut stats = cell_stats(&c);
    for _ in 0..max_iters {
        let r0 = residual(&c, &stats);
        // Jacobian of T: dT_i/da = phi(a)(mu - a)/P, dT_i/db = phi(b)(b - mu)/P,
        // and each midpoint moves by half of each neighbouring location.
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let (p, mu, _) = stats[i];
            let da = if i > 0 {
                let a = 0.5 * (c[i - 1] + c[i]);
                std_normal_pdf(a) * (mu - a) / p
            } else {
                0.0
            };
            let db = if i + 1 < n {
                let b = 0.5 * (c[i] + c[i + 1]);
                std_normal_pdf(b) * (b - mu) / p
            } else {
                0.0
            };
            sub[i] = -0.5 * da;
            sup[i] = -0.5 * db;
            diag[i] = 1.0 - 0.5 * (da + db);
            rhs[i] = mu - c[i];
        }
        let mut next: Vec<f64> = c.iter().zip(&stats).map(|(_, s)| s.1).collect();
        if let Some(step) = solve_tridiagonal(&sub, &diag, &sup, &rhs) {
            let mut trial: Vec<f64> = c.iter().zip(&step).map(|(a, b)| a + b).collect();
            symmetrize(&mut trial);
            if trial.windows(2).all(|w| w[0] < w[1]) {
                let trial_stats = cell_stats(&trial);
                if trial_stats.iter().all(|s| s.0 > 0.0) && residual(&trial, &trial_stats) < r0 {
                    next = trial;
                }
            }
        }
        symmetrize(&mut next);
        let change = c
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        c = next;
        stats = cell_stats(&c);
        if change < tol {
            return Ok(Quantizer1D {
                w2sq: distortion(&c, &stats),
                locations: c,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: residual(&c, &stats),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub locations: Vec<f64>,
    pub w2sq: f64,
}

/// Quantizers for every size `1..=max_n`, persisted as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct QuantizerTable {
    tol: f64,
    max_iters: usize,
    entries: Vec<Quantizer1D>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    version: u32,
    tol: f64,
    max_iters: usize,
    entries: BTreeMap<u32, TableEntry>,
}

impl QuantizerTable {
    pub fn build(max_n: usize, tol: f64, max_iters: usize) -> Result<Self> {
        if max_n == 0 {
            return Err(Error::invalid("table size must be at least 1"));
        }
        let entries = (1..=max_n)
            .map(|n| solve_quantizer_1d(n, tol, max_iters))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tol,
            max_iters,
            entries,
        })
    }

    /// Process-wide table of size [`DEFAULT_TABLE_SIZE`], built on first use.
    pub fn standard() -> &'static QuantizerTable {
        static TABLE: OnceLock<QuantizerTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            QuantizerTable::build(DEFAULT_TABLE_SIZE, TOL.quantizer_tol, TOL.quantizer_max_iters)
                .expect("standard quantizer table converges")
        })
    }

    pub fn max_size(&self) -> usize {
        self.entries.len()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn get(&self, n: usize) -> Result<&Quantizer1D> {
        if n == 0 || n > self.entries.len() {
            return Err(Error::invalid(format!(
                "quantizer size {n} outside table range 1..={}",
                self.entries.len()
            )));
        }
        Ok(&self.entries[n - 1])
    }

    /// Distortion for `n` levels; panics outside the table range.
    pub(crate) fn w2sq(&self, n: usize) -> f64 {
        self.entries[n - 1].w2sq
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::to_json_string(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl TryFrom<TableRepr> for QuantizerTable {
    type Error = Error;

    fn try_from(r: TableRepr) -> Result<Self> {
        if r.version != TABLE_VERSION {
            return Err(Error::invalid(format!(
                "unsupported quantizer table version {} (expected {TABLE_VERSION})",
                r.version
            )));
        }
        let mut entries = Vec::with_capacity(r.entries.len());
        for (i, (&k, e)) in r.entries.iter().enumerate() {
            let n = i + 1;
            if k as usize != n {
                return Err(Error::invalid(format!("quantizer table is missing size {n}")));
            }
            if e.locations.len() != n {
                return Err(Error::invalid(format!(
                    "table entry {n} has {} locations",
                    e.locations.len()
                )));
            }
            if !e.locations.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::invalid(format!("table entry {n} is not strictly increasing")));
            }
            if !(e.w2sq >= 0.0) {
                return Err(Error::invalid(format!("table entry {n} has invalid distortion")));
            }
            entries.push(Quantizer1D {
                locations: e.locations.clone(),
                w2sq: e.w2sq,
            });
        }
        if entries.is_empty() {
            return Err(Error::invalid("quantizer table is empty"));
        }
        Ok(Self {
            tol: r.tol,
            max_iters: r.max_iters,
            entries,
        })
    }
}

impl From<QuantizerTable> for TableRepr {
    fn from(t: QuantizerTable) -> Self {
        TableRepr {
            version: TABLE_VERSION,
            tol: t.tol,
            max_iters: t.max_iters,
            entries: t
                .entries
                .into_iter()
                .enumerate()
                .map(|(i, q)| {
                    (
                        i as u32 + 1,
                        TableEntry {
                            locations: q.locations,
                            w2sq: q.w2sq,
                        },
                    )
                })
                .collect(),
        }
    }
}
