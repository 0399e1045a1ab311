//! Primal network simplex for the dense transportation problem.
//!
//! Sources `0..m` and sinks `m..m+n` are joined by the `m * n` arcs of the
//! cost matrix. An artificial root node with one expensive artificial arc
//! per node provides the initial strongly feasible spanning tree. Entering
//! arcs are chosen by block search pricing; the leaving arc follows the
//! strongly-feasible-tree rule, which rules out cycling on degenerate pivots.
//! The tree is stored with parent, thread and successor-count arrays.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const UP: i8 = 1;
const DOWN: i8 = -1;

pub(crate) struct NetworkSimplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
    eps: f64,

    node_num: usize,
    arc_num: usize,
    root: usize,
    supply: Vec<f64>,

    flow: Vec<f64>,
    state: Vec<i8>,

    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<isize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    v_out: usize,
    delta: f64,

    block_size: usize,
    next_arc: usize,
}

impl<'a> NetworkSimplex<'a> {
    /// `cost` is row-major `m x n`; supplies must be nonnegative.
    pub(crate) fn new(cost: &'a [f64], a: &[f64], b: &[f64], eps: f64) -> Self {
        let (m, n) = (a.len(), b.len());
        debug_assert_eq!(cost.len(), m * n);
        let node_num = m + n;
        let arc_num = m * n;
        let max_cost = cost.iter().fold(0.0f64, |acc, &c| acc.max(c));
        let scale = if max_cost > 0.0 { max_cost } else { 1.0 };
        let all = node_num + 1;
        let mut supply = Vec::with_capacity(all);
        supply.extend_from_slice(a);
        supply.extend(b.iter().map(|x| -x));
        supply.push(-(a.iter().sum::<f64>() - b.iter().sum::<f64>()));
        let block_size = ((arc_num as f64).sqrt().ceil() as usize).max(10).min(arc_num.max(1));
        Self {
            m,
            n,
            cost,
            art_cost: scale * (node_num as f64 + 1.0) * 2.0,
            eps: eps * scale,
            node_num,
            arc_num,
            root: node_num,
            supply,
            flow: vec![0.0; arc_num + node_num],
            state: vec![STATE_LOWER; arc_num + node_num],
            pi: vec![0.0; all],
            parent: vec![NONE; all],
            pred: vec![NONE; all],
            pred_dir: vec![UP; all],
            thread: vec![0; all],
            rev_thread: vec![0; all],
            succ_num: vec![1; all],
            last_succ: vec![0; all],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            v_out: 0,
            delta: 0.0,
            block_size,
            next_arc: 0,
        }
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.n
        } else {
            let u = e - self.arc_num;
            if self.supply[u] >= 0.0 {
                u
            } else {
                self.root
            }
        }
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.m + e % self.n
        } else {
            let u = e - self.arc_num;
            if self.supply[u] >= 0.0 {
                self.root
            } else {
                u
            }
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.arc_num {
            self.cost[e]
        } else {
            let u = e - self.arc_num;
            if self.supply[u] >= 0.0 {
                0.0
            } else {
                self.art_cost
            }
        }
    }

    fn init(&mut self) {
        let root = self.root;
        self.parent[root] = NONE;
        self.pred[root] = NONE;
        self.thread[root] = 0;
        self.rev_thread[0] = root;
        self.succ_num[root] = self.node_num as isize + 1;
        self.last_succ[root] = root - 1;
        self.pi[root] = 0.0;
        for u in 0..self.node_num {
            let e = self.arc_num + u;
            self.parent[u] = root;
            self.pred[u] = e;
            self.thread[u] = u + 1;
            self.rev_thread[u + 1] = u;
            self.succ_num[u] = 1;
            self.last_succ[u] = u;
            self.state[e] = STATE_TREE;
            if self.supply[u] >= 0.0 {
                self.pred_dir[u] = UP;
                self.pi[u] = 0.0;
                self.flow[e] = self.supply[u];
            } else {
                self.pred_dir[u] = DOWN;
                self.pi[u] = self.art_cost;
                self.flow[e] = -self.supply[u];
            }
        }
    }

    /// Block search over the real arcs for the most negative reduced cost.
    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.eps;
        let mut cnt = self.block_size;
        let mut best = NONE;
        let total = self.arc_num;
        let mut e = self.next_arc;
        for _ in 0..total {
            if self.state[e] == STATE_LOWER {
                let c = self.cost[e] + self.pi[e / self.n] - self.pi[self.m + e % self.n];
                if c < min {
                    min = c;
                    best = e;
                }
            }
            cnt -= 1;
            e += 1;
            if e == total {
                e = 0;
            }
            if cnt == 0 {
                if best != NONE {
                    self.in_arc = best;
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
        }
        if best != NONE {
            self.in_arc = best;
            self.next_arc = e;
            return true;
        }
        false
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DOWN { f64::INFINITY } else { self.flow[e] };
            if d < self.delta {
                self.delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == UP { f64::INFINITY } else { self.flow[e] };
            if d <= self.delta {
                self.delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        self.v_out = self.parent[u_out];
        let v_out = self.v_out;
        let join = self.join;

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) { UP } else { DOWN };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            // When old_rev_thread is v_in, join and v_out coincide.
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // Re-hang the stem nodes between u_in and u_out.
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc: isize = 0;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) { UP } else { DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma =
            self.pi[self.v_in] - self.pi[u_in] - self.pred_dir[u_in] as f64 * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    /// Runs the simplex; returns the row-major flow on the real arcs.
    pub(crate) fn run(mut self, max_pivots: usize) -> Result<Vec<f64>> {
        if self.node_num == 0 {
            return Ok(Vec::new());
        }
        self.init();
        let mut pivots = 0usize;
        while self.find_entering_arc() {
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::NonConvergence {
                    iterations: max_pivots,
                    residual: f64::NAN,
                });
            }
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::Numerical("transportation problem is unbounded".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
        }
        self.flow.truncate(self.arc_num);
        Ok(self.flow)
    }
}
