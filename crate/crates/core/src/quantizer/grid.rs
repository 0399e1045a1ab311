//! Allocation of a grid budget across eigen-axes.

use serde::{Deserialize, Serialize};

use super::scalar::QuantizerTable;
use crate::config::TOL;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAllocation {
    /// One size per eigenvalue; degenerate axes get 1.
    pub per_axis_sizes: Vec<usize>,
    pub total: usize,
    /// `Σⱼ λⱼ w2sq(Nⱼ)`, degenerate axes included at `w2sq(1) = 1`.
    pub objective: f64,
}

/// Minimizes `Σⱼ λⱼ w2sq(Nⱼ)` subject to `Π Nⱼ <= budget`.
///
/// Eigenvalues must be sorted nonincreasing. Since `w2sq` is strictly
/// decreasing, an optimal vector is nonincreasing along the sorted axes, so
/// the search walks all nonincreasing size sequences whose product fits the
/// budget. Ties prefer the lexicographically larger sequence.
pub fn allocate_grid(eigenvalues: &[f64], budget: usize, table: &QuantizerTable) -> Result<GridAllocation> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("allocate_grid needs at least one eigenvalue"));
    }
    if budget == 0 {
        return Err(Error::invalid("signature budget must be at least 1"));
    }
    if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("eigenvalues must be finite and nonnegative"));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("eigenvalues must be sorted nonincreasing"));
    }
    let lmax = eigenvalues[0];
    let active = eigenvalues
        .iter()
        .take_while(|&&l| lmax > 0.0 && l > TOL.degeneracy * lmax)
        .count();
    if active > 0 && budget > table.max_size() {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the quantizer table size {}",
            table.max_size()
        )));
    }
    let fixed: f64 = eigenvalues[active..].iter().sum();

    let mut search = Search {
        lambda: &eigenvalues[..active],
        table,
        current: Vec::with_capacity(active),
        best: vec![1; active],
        best_obj: eigenvalues[..active].iter().sum(),
    };
    if active > 0 {
        search.descend(budget, budget, 0.0);
    }

    let mut sizes = search.best;
    let objective = search.best_obj + fixed;
    sizes.resize(eigenvalues.len(), 1);
    Ok(GridAllocation {
        total: sizes.iter().product(),
        per_axis_sizes: sizes,
        objective,
    })
}

struct Search<'a> {
    lambda: &'a [f64],
    table: &'a QuantizerTable,
    current: Vec<usize>,
    best: Vec<usize>,
    best_obj: f64,
}

impl Search<'_> {
    /// Extends `current` by one axis whose size is at most `cap` and fits `room`.
    fn descend(&mut self, room: usize, cap: usize, partial: f64) {
        let j = self.current.len();
        if j == self.lambda.len() {
            self.consider(partial);
            return;
        }
        let rest: f64 = self.lambda[j..].iter().sum();
        // Remaining axes at size 1 is the only option once the room is gone.
        if room < 2 {
            self.consider_with_ones(partial + rest);
            return;
        }
        for n in (1..=cap.min(room)).rev() {
            let term = self.lambda[j] * self.table.w2sq(n);
            self.current.push(n);
            if n == 1 {
                self.consider_with_ones(partial + rest);
            } else {
                self.descend(room / n, n, partial + term);
            }
            self.current.pop();
        }
    }

    fn consider_with_ones(&mut self, obj: f64) {
        let mut v = self.current.clone();
        v.resize(self.lambda.len(), 1);
        self.offer(v, obj);
    }

    fn consider(&mut self, obj: f64) {
        let v = self.current.clone();
        self.offer(v, obj);
    }

    fn offer(&mut self, v: Vec<usize>, obj: f64) {
        let slack = 1e-12 * self.best_obj.abs().max(obj.abs());
        if obj < self.best_obj - slack || ((obj - self.best_obj).abs() <= slack && v > self.best) {
            self.best = v;
            self.best_obj = obj;
        }
    }
}
