use std::collections::HashMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::gaussian::normalize_simplex;

/// A finitely supported probability distribution on `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Repr", into = "Repr")]
pub struct DiscreteDist {
    locations: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Repr {
    locations: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<Repr> for DiscreteDist {
    type Error = Error;
    fn try_from(r: Repr) -> Result<Self> {
        let locs = r.locations.into_iter().map(DVector::from_vec).collect();
        DiscreteDist::new(locs, r.weights)
    }
}

impl From<DiscreteDist> for Repr {
    fn from(d: DiscreteDist) -> Self {
        Repr {
            locations: d.locations.iter().map(|v| v.iter().copied().collect()).collect(),
            weights: d.weights,
        }
    }
}

impl DiscreteDist {
    pub fn new(locations: Vec<DVector<f64>>, mut weights: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::invalid("a discrete distribution needs at least one atom"));
        }
        if locations.len() != weights.len() {
            return Err(Error::Dimension {
                expected: locations.len(),
                got: weights.len(),
                context: "one weight per atom",
            });
        }
        let n = locations[0].len();
        if let Some(bad) = locations.iter().find(|l| l.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.len(),
                context: "atoms must share a dimension",
            });
        }
        if locations.iter().flat_map(|l| l.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite atom location"));
        }
        normalize_simplex(&mut weights)?;
        Ok(Self { locations, weights })
    }

    /// Unit mass at a single point.
    pub fn dirac(x: DVector<f64>) -> Self {
        Self {
            locations: vec![x],
            weights: vec![1.0],
        }
    }

    /// Drops zero-weight atoms and merges atoms at bitwise-equal locations.
    pub(crate) fn from_parts_merged(locations: Vec<DVector<f64>>, weights: Vec<f64>) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut locs = Vec::new();
        let mut ws: Vec<f64> = Vec::new();
        for (l, w) in locations.into_iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            // -0.0 and 0.0 are the same point.
            let key: Vec<u64> = l.iter().map(|x| (x + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&k) => ws[k] += w,
                None => {
                    index.insert(key, locs.len());
                    locs.push(l);
                    ws.push(w);
                }
            }
        }
        let total: f64 = ws.iter().sum();
        ws.iter_mut().for_each(|w| *w /= total);
        Self {
            locations: locs,
            weights: ws,
        }
    }

    pub fn locations(&self) -> &[DVector<f64>] {
        &self.locations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.locations[0].len()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (l, &w) in self.locations.iter().zip(&self.weights) {
            m.axpy(w, l, 1.0);
        }
        m
    }

    pub fn second_moment(&self) -> f64 {
        self.locations
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| w * l.norm_squared())
            .sum()
    }

    /// Squared-Euclidean cost matrix against another distribution.
    pub fn cost_matrix(&self, other: &DiscreteDist) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.len(), other.len(), |i, j| {
            (&self.locations[i] - &other.locations[j]).norm_squared()
        })
    }

    /// Exact W2 to another discrete distribution.
    pub fn w2(&self, other: &DiscreteDist) -> Result<f64> {
        let plan = crate::transport::solve_discrete_ot(&self.cost_matrix(other), &self.weights, &other.weights)?;
        Ok(plan.cost.max(0.0).sqrt())
    }
}
