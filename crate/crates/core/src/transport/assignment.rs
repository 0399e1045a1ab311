//! Linear assignment by successive shortest paths on a sparse candidate
//! graph, verified against the full cost matrix.
//!
//! Rows start with their `k` cheapest arcs by reduced cost. Large problems
//! take their starting column potentials from an exact solve on a quarter
//! subsample. After a perfect matching is
//! found, every arc's reduced cost is checked; rows with negative reduced
//! arcs receive those arcs, lower their dual to stay feasible, and are
//! re-matched. The loop ends once all reduced costs are nonnegative, which
//! certifies optimality of the matching.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

const NONE: usize = usize::MAX;

/// Row access to a square cost matrix.
pub(crate) trait CostRows {
    fn size(&self) -> usize;
    fn fill_row(&self, i: usize, out: &mut [f64]);
    fn entry(&self, i: usize, j: usize) -> f64;
}

/// Row-major dense matrix.
pub(crate) struct Dense<'a> {
    pub data: &'a [f64],
    pub n: usize,
}

impl CostRows for Dense<'_> {
    fn size(&self) -> usize {
        self.n
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[i * self.n..(i + 1) * self.n]);
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Squared Euclidean distances between two equal-size point sets.
pub(crate) struct SqEuclid {
    xs: Vec<Vec<f64>>,
    x_norms: Vec<f64>,
    /// Column points stored coordinate-major.
    ys_t: Vec<Vec<f64>>,
    y_norms: Vec<f64>,
}

impl SqEuclid {
    pub(crate) fn new(xs: &[nalgebra::DVector<f64>], ys: &[nalgebra::DVector<f64>]) -> Self {
        let d = xs.first().map_or(0, |x| x.len());
        Self {
            xs: xs.iter().map(|x| x.iter().copied().collect()).collect(),
            x_norms: xs.iter().map(|x| x.norm_squared()).collect(),
            ys_t: (0..d).map(|k| ys.iter().map(|y| y[k]).collect()).collect(),
            y_norms: ys.iter().map(|y| y.norm_squared()).collect(),
        }
    }
}

impl CostRows for SqEuclid {
    fn size(&self) -> usize {
        self.xs.len()
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let a = self.x_norms[i];
        for (o, &b) in out.iter_mut().zip(&self.y_norms) {
            *o = a + b;
        }
        for (yk, &xk) in self.ys_t.iter().zip(&self.xs[i]) {
            let t = -2.0 * xk;
            for (o, &y) in out.iter_mut().zip(yk) {
                *o += t * y;
            }
        }
        for o in out.iter_mut() {
            *o = o.max(0.0);
        }
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        let mut s = self.x_norms[i] + self.y_norms[j];
        for (yk, &xk) in self.ys_t.iter().zip(&self.xs[i]) {
            s += -2.0 * xk * yk[j];
        }
        s.max(0.0)
    }
}

/// Heap key ordered by distance, then index.
#[derive(PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

struct Solver<'c> {
    cost: &'c dyn CostRows,
    n: usize,
    adj: Vec<Vec<(usize, f64)>>,
    u: Vec<f64>,
    v: Vec<f64>,
    x: Vec<usize>,
    y: Vec<usize>,
    dist: Vec<f64>,
    done: Vec<bool>,
    pred: Vec<usize>,
    touched: Vec<usize>,
    buf: Vec<f64>,
}

/// Minimum-cost perfect matching; returns `row_to_col`.
///
/// `k` is the initial number of candidate arcs per row.
pub(crate) fn lap(cost: &dyn CostRows, k: usize) -> Vec<usize> {
    solve(cost, k).0
}

/// Size below which the potentials are not warm-started.
const WARM_START_MIN: usize = 1024;

/// Returns the matching together with row and column potentials.
fn solve(cost: &dyn CostRows, k: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.size();
    if n <= 1 {
        let z = vec![0.0; n];
        return ((0..n).collect(), z.clone(), z);
    }
    let k = k.clamp(1, n);
    let mut s = Solver {
        cost,
        n,
        adj: vec![Vec::new(); n],
        u: vec![0.0; n],
        v: vec![0.0; n],
        x: vec![NONE; n],
        y: vec![NONE; n],
        dist: vec![f64::INFINITY; n],
        done: vec![false; n],
        pred: vec![NONE; n],
        touched: Vec::new(),
        buf: vec![0.0; n],
    };
    if n >= WARM_START_MIN {
        // Exact potentials of a subsample, extended to every column by the
        // c-transform `v(j) = min_r c(r, j) - u(r)`.
        let m = n / 4;
        let idx: Vec<usize> = (0..m).map(|t| t * n / m).collect();
        let sub: Vec<f64> = idx.iter().flat_map(|&i| idx.iter().map(move |&j| cost.entry(i, j))).collect();
        let (_, su, _) = solve(&Dense { data: &sub, n: m }, k);
        s.v.fill(f64::INFINITY);
        for (&r, &ur) in idx.iter().zip(&su) {
            cost.fill_row(r, &mut s.buf);
            for (vj, &c) in s.v.iter_mut().zip(&s.buf) {
                *vj = vj.min(c - ur);
            }
        }
    }
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut scale = 0.0f64;
    for i in 0..n {
        cost.fill_row(i, &mut s.buf);
        scale = s.buf.iter().fold(scale, |m, &c| m.max(c));
        scratch.clear();
        scratch.extend(s.buf.iter().zip(&s.v).enumerate().map(|(j, (&c, &vj))| (c - vj, j)));
        smallest(&mut scratch, k);
        s.adj[i] = scratch[..k].iter().map(|&(_, j)| (j, s.buf[j])).collect();
        s.u[i] = scratch[..k].iter().fold(f64::INFINITY, |m, p| m.min(p.0));
    }
    // Rows whose tightest column is still free match directly.
    let mut free = Vec::new();
    for i in 0..n {
        let tight = s.adj[i].iter().find(|&&(j, c)| c - s.v[j] == s.u[i] && s.y[j] == NONE);
        match tight {
            Some(&(j, _)) => {
                s.x[i] = j;
                s.y[j] = i;
            }
            None => free.push(i),
        }
    }
    // Reduced costs above -tol count as feasible.
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    loop {
        for &i in &free {
            s.augment(i);
        }
        free = s.repair(&mut scratch, k, tol);
        if free.is_empty() {
            return (s.x, s.u, s.v);
        }
    }
}

/// Moves the `k` smallest entries to the front.
fn smallest(v: &mut [(f64, usize)], k: usize) {
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    }
}

impl Solver<'_> {
    /// Matches the free row `f` along a shortest augmenting path.
    fn augment(&mut self, f: usize) {
        loop {
            if let Some(sink) = self.shortest_path(f) {
                let mut j = sink;
                loop {
                    let i = self.pred[j];
                    self.y[j] = i;
                    let prev = self.x[i];
                    self.x[i] = j;
                    if i == f {
                        break;
                    }
                    j = prev;
                }
                return;
            }
            // No free column is reachable from the current arcs.
            self.expand(f);
        }
    }

    fn shortest_path(&mut self, f: usize) -> Option<usize> {
        for &j in &self.touched {
            self.dist[j] = f64::INFINITY;
            self.done[j] = false;
        }
        self.touched.clear();
        let mut heap = BinaryHeap::new();
        let mut scanned_rows = vec![f];
        self.relax(f, 0.0, &mut heap);
        let mut result = None;
        while let Some(Reverse(Key(d, j))) = heap.pop() {
            if self.done[j] || d > self.dist[j] {
                continue;
            }
            self.done[j] = true;
            let i = self.y[j];
            if i == NONE {
                result = Some((j, d));
                break;
            }
            scanned_rows.push(i);
            self.relax(i, d, &mut heap);
        }
        let (sink, dmin) = result?;
        // Dual update keeps matched arcs tight and all arcs feasible.
        self.u[f] += dmin;
        for &i in &scanned_rows[1..] {
            self.u[i] += dmin - self.dist[self.x[i]];
        }
        for &j in &self.touched {
            if self.done[j] && j != sink {
                self.v[j] -= dmin - self.dist[j];
            }
        }
        Some(sink)
    }

    fn relax(&mut self, i: usize, d: f64, heap: &mut BinaryHeap<Reverse<Key>>) {
        let ui = self.u[i];
        for &(j, c) in &self.adj[i] {
            if self.done[j] {
                continue;
            }
            let nd = d + (c - ui - self.v[j]).max(0.0);
            if nd < self.dist[j] {
                if self.dist[j] == f64::INFINITY {
                    self.touched.push(j);
                }
                self.dist[j] = nd;
                self.pred[j] = i;
                heap.push(Reverse(Key(nd, j)));
            }
        }
    }

    /// Doubles the arc set of row `i`, adding its cheapest missing arcs by
    /// reduced cost.
    fn expand(&mut self, i: usize) {
        self.cost.fill_row(i, &mut self.buf);
        let mut have = vec![false; self.n];
        for &(j, _) in &self.adj[i] {
            have[j] = true;
        }
        let mut cand: Vec<(f64, usize)> = (0..self.n)
            .filter(|&j| !have[j])
            .map(|j| (self.buf[j] - self.v[j], j))
            .collect();
        let take = self.adj[i].len().max(1).min(cand.len());
        smallest(&mut cand, take);
        for &(_, j) in &cand[..take] {
            self.adj[i].push((j, self.buf[j]));
        }
        self.lower_dual(i);
    }

    /// Lowers `u[i]` to the smallest reduced cost among its arcs, unmatching
    /// the row if its matched arc stops being tight.
    fn lower_dual(&mut self, i: usize) -> bool {
        let vi = &self.v;
        let m = self.adj[i].iter().fold(f64::INFINITY, |m, &(j, c)| m.min(c - vi[j]));
        if m < self.u[i] {
            self.u[i] = m;
            let j = self.x[i];
            if j != NONE {
                self.x[i] = NONE;
                self.y[j] = NONE;
                return true;
            }
        }
        false
    }

    /// Adds violated arcs and returns the rows that lost their match.
    fn repair(&mut self, scratch: &mut Vec<(f64, usize)>, k: usize, tol: f64) -> Vec<usize> {
        let mut freed = Vec::new();
        for i in 0..self.n {
            self.cost.fill_row(i, &mut self.buf);
            let ui = self.u[i];
            scratch.clear();
            for (j, (&c, &vj)) in self.buf.iter().zip(&self.v).enumerate() {
                let r = c - ui - vj;
                if r < -tol {
                    scratch.push((r, j));
                }
            }
            if scratch.is_empty() {
                continue;
            }
            let take = k.min(scratch.len());
            smallest(scratch, take);
            for &(_, j) in &scratch[..take] {
                self.adj[i].push((j, self.buf[j]));
            }
            if self.lower_dual(i) {
                freed.push(i);
            }
        }
        freed
    }
}
