use nalgebra::DVector;
use serde::Serialize;

use super::DiscreteDist;
use crate::config::TOL;
use crate::error::{Error, Result};

/// Result of [`compress_dropout`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropoutCompression {
    pub compressed: DiscreteDist,
    pub w2_bound: f64,
    /// Dimensions that keep their mask randomness, ascending.
    pub active_dims: Vec<usize>,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("keep probability {theta} is outside [0, 1]")));
    }
    Ok(())
}

/// Units of a `blocks`-fold stacked vector; unit `d` owns coordinates
/// `d, d + w, d + 2w, ...` and all of them share one mask bit.
fn unit_width(base: &DiscreteDist, blocks: usize) -> Result<usize> {
    let n = base.dim();
    if blocks == 0 || !n.is_multiple_of(blocks) {
        return Err(Error::invalid(format!("dimension {n} is not a multiple of {blocks} blocks")));
    }
    Ok(n / blocks)
}

/// Pushes every atom through every mask over `dims`; other units are kept.
fn masked(base: &DiscreteDist, theta: f64, dims: &[usize], width: usize) -> DiscreteDist {
    if theta == 1.0 || dims.is_empty() {
        return base.clone();
    }
    let k = dims.len();
    let n = base.dim();
    let mut locs = Vec::with_capacity(base.len() << k);
    let mut ws = Vec::with_capacity(base.len() << k);
    for (c, &pi) in base.locations().iter().zip(base.weights()) {
        for mask in 0u64..(1u64 << k) {
            let kept = mask.count_ones() as i32;
            let w = pi * theta.powi(kept) * (1.0 - theta).powi(k as i32 - kept);
            let mut x = c.clone();
            for (bit, &d) in dims.iter().enumerate() {
                if mask >> bit & 1 == 0 {
                    let mut t = d;
                    while t < n {
                        x[t] = 0.0;
                        t += width;
                    }
                }
            }
            locs.push(x);
            ws.push(w);
        }
    }
    DiscreteDist::from_parts_merged(locs, ws)
}

/// Exact law of `b ⊙ z` for `z ~ base` and i.i.d. Bernoulli(`theta`) mask `b`.
///
/// Fails with [`Error::SupportOverflow`] when `2^n` exceeds `dim_cap`.
pub fn expand_dropout(base: &DiscreteDist, theta: f64, dim_cap: usize) -> Result<DiscreteDist> {
    expand_dropout_blocked(base, theta, dim_cap, 1)
}

pub(crate) fn expand_dropout_blocked(base: &DiscreteDist, theta: f64, dim_cap: usize, blocks: usize) -> Result<DiscreteDist> {
    check_theta(theta)?;
    let width = unit_width(base, blocks)?;
    if theta == 0.0 {
        return Ok(DiscreteDist::dirac(DVector::zeros(base.dim())));
    }
    if theta == 1.0 {
        return Ok(base.clone());
    }
    let masks = if width >= 64 { usize::MAX } else { 1usize.checked_shl(width as u32).unwrap_or(usize::MAX) };
    let size = masks.saturating_mul(base.len());
    if masks > dim_cap || size > TOL.atom_cap {
        return Err(Error::SupportOverflow {
            size,
            cap: dim_cap.min(TOL.atom_cap),
            hint: "use compress_dropout to bound the support",
        });
    }
    let dims: Vec<usize> = (0..width).collect();
    Ok(masked(base, theta, &dims, width))
}

/// Per-dimension score `Σⱼ πⱼ cⱼ,d²` used to pick the randomised dimensions.
pub fn dropout_dimension_scores(base: &DiscreteDist) -> Vec<f64> {
    scores(base, base.dim())
}

fn scores(base: &DiscreteDist, width: usize) -> Vec<f64> {
    let mut s = vec![0.0; width];
    for (c, &pi) in base.locations().iter().zip(base.weights()) {
        for (t, x) in c.iter().enumerate() {
            s[t % width] += pi * x * x;
        }
    }
    s
}

/// Keeps mask randomness on the `log2(m)` highest-scoring dimensions and
/// forces the others to be kept.
///
/// The bound `√(Σⱼ πⱼ (1−θ) Σ_{d∉I} cⱼ,d²)` is the cost of the coupling
/// that shares the mask on the active dimensions.
pub fn compress_dropout(base: &DiscreteDist, theta: f64, m: usize) -> Result<DropoutCompression> {
    compress_dropout_blocked(base, theta, m, 1)
}

pub(crate) fn compress_dropout_blocked(base: &DiscreteDist, theta: f64, m: usize, blocks: usize) -> Result<DropoutCompression> {
    check_theta(theta)?;
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::invalid(format!("dropout support {m} is not a power of two")));
    }
    let width = unit_width(base, blocks)?;
    let k = m.trailing_zeros() as usize;
    if k > width {
        return Err(Error::invalid(format!(
            "dropout support 2^{k} exceeds the 2^{width} possible masks"
        )));
    }
    let s = scores(base, width);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut active = order[..k].to_vec();
    active.sort_unstable();
    let rest: f64 = order[k..].iter().map(|&d| s[d]).sum();
    let w2_bound = ((1.0 - theta) * rest).max(0.0).sqrt();
    let compressed = if theta == 0.0 && k == width {
        DiscreteDist::dirac(DVector::zeros(base.dim()))
    } else {
        masked(base, theta, &active, width)
    };
    Ok(DropoutCompression {
        compressed,
        w2_bound,
        active_dims: active,
    })
}
