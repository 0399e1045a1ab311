use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{Covariance, Gaussian, GaussianMixture};
use crate::transport::mw2;

pub const LLOYD_MAX_ITERS: usize = 200;

/// Outcome of [`compress_gmm`].
#[derive(Debug, Clone, Serialize)]
pub struct CompressionResult {
    pub compressed: GaussianMixture,
    /// `mw2(input, compressed)`.
    pub w2_bound: f64,
    /// Cluster index of every input component.
    pub cluster_assignment: Vec<usize>,
}

/// Reduces `g` to at most `m` components.
///
/// Component means are clustered by π-weighted k-means++ seeding followed by
/// Lloyd iterations; each cluster becomes its moment-matched Gaussian. The
/// seeding for `m` clusters extends the seeding for `m - 1` under the same
/// seed, and the result with the smallest bound over cluster counts `1..=m`
/// is returned, so the bound is nonincreasing in `m`.
pub fn compress_gmm(g: &GaussianMixture, m: usize, seed: u64) -> Result<CompressionResult> {
    if m == 0 {
        return Err(Error::invalid("compression target must be at least 1"));
    }
    if g.len() <= m {
        return Ok(CompressionResult {
            compressed: g.clone(),
            w2_bound: 0.0,
            cluster_assignment: (0..g.len()).collect(),
        });
    }
    let means: Vec<&DVector<f64>> = g.components().iter().map(|c| c.mean()).collect();
    let mut best: Option<CompressionResult> = None;
    for k in 1..=m {
        let assignment = kmeans(&means, g.weights(), k, seed);
        let (compressed, assignment) = moment_match(g, &assignment)?;
        let (w2_bound, _) = mw2(g, &compressed)?;
        if best.as_ref().is_none_or(|b| w2_bound < b.w2_bound) {
            best = Some(CompressionResult {
                compressed,
                w2_bound,
                cluster_assignment: assignment,
            });
        }
        if best.as_ref().is_some_and(|b| b.w2_bound == 0.0) {
            break;
        }
    }
    Ok(best.expect("at least one cluster count is tried"))
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index drawn with probability proportional to `w`; `None` if all are zero.
fn draw(w: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &x) in w.iter().enumerate() {
        if x > 0.0 {
            last = Some(i);
            if u < x {
                return Some(i);
            }
            u -= x;
        }
    }
    last
}

/// Cluster label of each point; labels are `0..k'` with `k' <= k`.
fn kmeans(points: &[&DVector<f64>], weights: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Zero-weight components still need a cluster; use uniform weights then.
    let w: Vec<f64> = if weights.iter().all(|&x| x == 0.0) { vec![1.0; n] } else { weights.to_vec() };
    let first = draw(&w, &mut rng).unwrap_or(0);
    let mut centers: Vec<DVector<f64>> = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let score: Vec<f64> = d2.iter().zip(&w).map(|(d, w)| d * w).collect();
        let Some(next) = draw(&score, &mut rng) else { break };
        centers.push(points[next].clone());
        let c = centers.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    let k = centers.len();
    let nearest = |p: &DVector<f64>, centers: &[DVector<f64>]| -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    };
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..LLOYD_MAX_ITERS {
        // Update step with π-weighted centroids.
        let dim = points[0].len();
        let mut sums = vec![DVector::zeros(dim); k];
        let mut mass = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums[l].axpy(w[i], points[i], 1.0);
            mass[l] += w[i];
            count[l] += 1;
        }
        for j in 0..k {
            if count[j] == 0 {
                // Re-seed at the component mean farthest from its own centroid.
                let far = (0..n)
                    .map(|i| (i, sq_dist(points[i], &centers[labels[i]])))
                    .fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                centers[j] = points[far].clone();
            } else if mass[j] > 0.0 {
                centers[j] = &sums[j] / mass[j];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Replaces every nonempty cluster by its moment-matched Gaussian; returns
/// the mixture and labels renumbered to the surviving clusters.
fn moment_match(g: &GaussianMixture, labels: &[usize]) -> Result<(GaussianMixture, Vec<usize>)> {
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members.retain(|m| !m.is_empty());
    let mut relabel = vec![0usize; g.len()];
    let mut weights = Vec::with_capacity(members.len());
    let mut comps = Vec::with_capacity(members.len());
    let dim = g.dim();
    for (j, idx) in members.iter().enumerate() {
        for &i in idx {
            relabel[i] = j;
        }
        if idx.len() == 1 {
            weights.push(g.weights()[idx[0]]);
            comps.push(g.components()[idx[0]].clone());
            continue;
        }
        let total: f64 = idx.iter().map(|&i| g.weights()[i]).sum();
        // Zero-mass clusters keep a plain average so the component is defined.
        let w: Vec<f64> = if total > 0.0 {
            idx.iter().map(|&i| g.weights()[i] / total).collect()
        } else {
            vec![1.0 / idx.len() as f64; idx.len()]
        };
        let mut mean = DVector::zeros(dim);
        for (&i, &wi) in idx.iter().zip(&w) {
            mean.axpy(wi, g.components()[i].mean(), 1.0);
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (&i, &wi) in idx.iter().zip(&w) {
            let c = &g.components()[i];
            match c.cov() {
                Covariance::Diag(v) => {
                    for t in 0..dim {
                        cov[(t, t)] += wi * v[t];
                    }
                }
                Covariance::Full(s) => cov += s * wi,
            }
            let d = c.mean() - &mean;
            cov.ger(wi, &d, &d, 1.0);
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        weights.push(total);
        comps.push(Gaussian::new_unchecked(mean, Covariance::Full(cov)));
    }
    Ok((GaussianMixture::from_unnormalized(weights, comps), relabel))
}
