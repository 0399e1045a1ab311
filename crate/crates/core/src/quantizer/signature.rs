//! Grid signatures of Gaussians and Gaussian mixtures.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use super::grid::allocate_grid;
use super::scalar::QuantizerTable;
use crate::config::TOL;
use crate::error::{Error, Result};
use crate::snn::Activation;
use crate::stats::linalg::{symmetric_eig, EigenBasis};
use crate::stats::truncated::{std_truncated, Bound, Interval};
use crate::stats::{Covariance, Gaussian, GaussianMixture};

/// Eigen frame of one mixture component: `x = mean + axes * z + (pinned part)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentFrame {
    pub component: usize,
    pub weight: f64,
    pub mean: DVector<f64>,
    /// `V_r diag(sqrt(lambda_r))` over the non-degenerate axes.
    pub axes: DMatrix<f64>,
    /// Variance left on the degenerate axes, which are pinned at the mean.
    pub residual_variance: f64,
    /// Per-coordinate share of `residual_variance`.
    pub residual_diag: DVector<f64>,
    /// Squared W2 between the component and its own signature.
    pub w2sq: f64,
}

/// Voronoi cell of one atom in whitened coordinates of its component.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub frame: usize,
    pub bounds: Vec<Interval>,
    /// Standard-normal mass of the cell itself.
    pub mass: f64,
    /// `E[‖x - c‖² | x in cell]` in original coordinates.
    pub cost: f64,
    /// Mass of pruned cells merged into this atom.
    pub merged_mass: f64,
    /// `Σ P_j E[‖x - c‖² | x in cell j]` over the merged cells.
    pub merged_cost: f64,
}

/// A finitely supported approximation of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub locations: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    /// Per-atom cell metadata; `None` for free-form atoms.
    pub cells: Vec<Option<GridCell>>,
    pub frames: Vec<ComponentFrame>,
    /// Standard-normal-weighted mass of the pruned cells, summed over components.
    pub pruned_mass: f64,
    /// W2 bound between the source and this signature.
    pub w2_bound: f64,
}

impl Signature {
    /// A free-form signature without cell metadata.
    pub fn unstructured(locations: Vec<DVector<f64>>, weights: Vec<f64>, w2_bound: f64) -> Result<Self> {
        if locations.len() != weights.len() || locations.is_empty() {
            return Err(Error::invalid("signature needs one weight per location"));
        }
        let mut weights = weights;
        crate::stats::gaussian::normalize_simplex(&mut weights)?;
        Ok(Self {
            cells: vec![None; locations.len()],
            locations,
            weights,
            frames: Vec::new(),
            pruned_mass: 0.0,
            w2_bound,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.locations.first().map_or(0, |x| x.len())
    }
}

/// Eigenbasis of a covariance; diagonal covariances are sorted directly.
fn eigen_frame(cov: &Covariance) -> Result<EigenBasis> {
    match cov {
        Covariance::Full(m) => symmetric_eig(m, TOL.degeneracy),
        Covariance::Diag(v) => {
            let n = v.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
            let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| v[i]));
            let mut eigenvectors = DMatrix::zeros(n, n);
            for (k, &i) in order.iter().enumerate() {
                eigenvectors[(i, k)] = 1.0;
            }
            let lmax = if n > 0 { eigenvalues[0] } else { 0.0 };
            let rank = if lmax > 0.0 {
                eigenvalues.iter().take_while(|&&l| l > TOL.degeneracy * lmax).count()
            } else {
                0
            };
            Ok(EigenBasis {
                eigenvalues,
                eigenvectors,
                rank,
            })
        }
    }
}

struct Atom {
    location: DVector<f64>,
    cell: GridCell,
    whitened: Vec<f64>,
}

fn build_component(
    g: &Gaussian,
    budget: usize,
    table: &QuantizerTable,
    component: usize,
    frame_index: usize,
    prune_mass: f64,
) -> Result<(Vec<Atom>, ComponentFrame, f64)> {
    let basis = eigen_frame(g.cov())?;
    let rank = basis.rank;
    let residual: f64 = basis.eigenvalues.iter().skip(rank).sum();
    let n = g.dim();
    let residual_diag = DVector::from_fn(n, |j, _| {
        (rank..n)
            .map(|l| basis.eigenvalues[l] * basis.eigenvectors[(j, l)].powi(2))
            .sum()
    });
    let axes = basis.scaled_axes();
    let mean = g.mean().clone();

    if rank == 0 {
        let atom = Atom {
            location: mean.clone(),
            cell: GridCell {
                frame: frame_index,
                bounds: Vec::new(),
                mass: 1.0,
                cost: residual,
                merged_mass: 0.0,
                merged_cost: 0.0,
            },
            whitened: Vec::new(),
        };
        let frame = ComponentFrame {
            component,
            weight: 0.0,
            mean,
            axes,
            residual_variance: residual,
            residual_diag,
            w2sq: residual,
        };
        return Ok((vec![atom], frame, 0.0));
    }

    let lambda = &basis.eigenvalues.as_slice()[..rank];
    let alloc = allocate_grid(lambda, budget, table)?;
    let sizes = &alloc.per_axis_sizes;
    let q = sizes.iter().take_while(|&&n| n > 1).count();
    // Axes held at size 1 contribute their full variance to every cell.
    let flat_cost: f64 = lambda[q..].iter().sum::<f64>() + residual;

    let quantizers = sizes[..q]
        .iter()
        .map(|&n| table.get(n))
        .collect::<Result<Vec<_>>>()?;
    let moments: Vec<Vec<(f64, f64, f64)>> = quantizers.iter().map(|qz| qz.cell_moments()).collect();

    let total: usize = sizes[..q].iter().product();
    let mut kept: Vec<Atom> = Vec::with_capacity(total);
    let mut pruned: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    let mut pruned_mass = 0.0;
    let mut idx = vec![0usize; q];
    for _ in 0..total {
        let mut mass = 1.0;
        let mut cost = flat_cost;
        let mut whitened = Vec::with_capacity(q);
        for l in 0..q {
            let (p, _, var) = moments[l][idx[l]];
            mass *= p;
            // The centroid condition puts the cell mean at the location.
            cost += lambda[l] * var;
            whitened.push(quantizers[l].locations[idx[l]]);
        }
        if mass < prune_mass {
            pruned_mass += mass;
            pruned.push((mass, whitened, cost));
        } else {
            let mut location = mean.clone();
            for (l, &z) in whitened.iter().enumerate() {
                location.axpy(z, &axes.column(l), 1.0);
            }
            let mut bounds = Vec::with_capacity(rank);
            for l in 0..rank {
                if l < q {
                    let (lo, hi) = quantizers[l].cell(idx[l]);
                    bounds.push(Interval {
                        lo: Bound::from(lo),
                        hi: Bound::from(hi),
                    });
                } else {
                    bounds.push(Interval::real_line());
                }
            }
            kept.push(Atom {
                location,
                cell: GridCell {
                    frame: frame_index,
                    bounds,
                    mass,
                    cost,
                    merged_mass: 0.0,
                    merged_cost: 0.0,
                },
                whitened,
            });
        }
        for l in (0..q).rev() {
            idx[l] += 1;
            if idx[l] < sizes[l] {
                break;
            }
            idx[l] = 0;
        }
    }

    let mut extra = 0.0;
    for (mass, whitened, cost) in pruned {
        let dist = |a: &Atom| -> f64 {
            (0..q)
                .map(|l| lambda[l] * (a.whitened[l] - whitened[l]).powi(2))
                .sum()
        };
        let (k, d2) = kept
            .iter()
            .enumerate()
            .map(|(k, a)| (k, dist(a)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("the heaviest cell is never pruned");
        let cell = &mut kept[k].cell;
        cell.merged_mass += mass;
        cell.merged_cost += mass * (cost + d2);
        extra += mass * d2;
    }
    let w2sq = alloc.objective + residual + extra;
    let frame = ComponentFrame {
        component,
        weight: 0.0,
        mean,
        axes,
        residual_variance: residual,
        residual_diag,
        w2sq,
    };
    Ok((kept, frame, pruned_mass))
}

/// Grid signature of a Gaussian with at most `budget` atoms.
///
/// Returns the signature and the squared W2 distance between `g` and it,
/// which is `Σ_l λ_l w2sq(N_l)` plus the variance of the pinned degenerate
/// axes, plus the extra cost of cells pruned for negligible mass.
pub fn signature_of_gaussian(g: &Gaussian, budget: usize, table: &QuantizerTable) -> Result<(Signature, f64)> {
    let (sig, bound) = signature_of_mixture(&GaussianMixture::single(g.clone()), budget, table)?;
    Ok((sig, bound * bound))
}

/// Union of per-component grid signatures with atom weights scaled by the
/// component weights. The returned bound is `√(Σᵢ πᵢ w2sqᵢ)`.
pub fn signature_of_mixture(
    g: &GaussianMixture,
    budget_per_component: usize,
    table: &QuantizerTable,
) -> Result<(Signature, f64)> {
    if budget_per_component == 0 {
        return Err(Error::invalid("signature budget must be at least 1"));
    }
    let mut locations = Vec::new();
    let mut weights = Vec::new();
    let mut cells = Vec::new();
    let mut frames = Vec::new();
    let mut pruned_mass = 0.0;
    let mut bound_sq = 0.0;
    for (i, (w, c)) in g.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (atoms, mut frame, pruned) = build_component(c, budget_per_component, table, i, frames.len(), TOL.prune_mass)?;
        frame.weight = w;
        bound_sq += w * frame.w2sq;
        pruned_mass += w * pruned;
        for a in atoms {
            weights.push(w * (a.cell.mass + a.cell.merged_mass));
            locations.push(a.location);
            cells.push(Some(a.cell));
        }
        frames.push(frame);
    }
    let bound = bound_sq.max(0.0).sqrt();
    Ok((
        Signature {
            locations,
            weights,
            cells,
            frames,
            pruned_mass,
            w2_bound: bound,
        },
        bound,
    ))
}

/// Bound on `W2(σ#p, σ#Δ(p))` for an activation `σ` applied after a signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivationBound {
    pub w2_bound: f64,
    /// True when some atom lacked cell metadata and the global bound was used.
    pub metadata_missing: bool,
}

/// `E[(relu(x) - relu(c))² | u in [lo, hi]]` for `x = m + a u`, `u ~ N(0, 1)`.
fn relu_axis_cost(m: f64, a: f64, c: f64, lo: f64, hi: f64) -> f64 {
    let (mass, _, _) = std_truncated(lo, hi);
    if mass <= 0.0 {
        return 0.0;
    }
    let r = c.max(0.0);
    let t = -m / a;
    let (plo, phi) = if a > 0.0 { (lo.max(t), hi) } else { (lo, hi.min(t)) };
    let (p_pos, mu, var) = if plo < phi { std_truncated(plo, phi) } else { (0.0, 0.0, 0.0) };
    let p_neg = (mass - p_pos).max(0.0);
    let pos = if p_pos > 0.0 {
        p_pos * (a * a * var + (m + a * mu - r).powi(2))
    } else {
        0.0
    };
    (pos + p_neg * r * r) / mass
}

/// `E[‖relu(x) - relu(c)‖² | x in cell]`, bounded per original coordinate.
///
/// A coordinate driven by a single whitened axis is integrated exactly.
/// Otherwise a coordinate whose range over the cell is nonpositive costs
/// nothing and any other coordinate keeps its full squared deviation.
fn relu_cell_cost(frame: &ComponentFrame, cell: &GridCell, c: &DVector<f64>) -> f64 {
    let n = frame.mean.len();
    let rank = frame.axes.ncols();
    let axis_var: Vec<f64> = cell
        .bounds
        .iter()
        .map(|b| std_truncated(b.lo.value(), b.hi.value()).2)
        .collect();
    let mut total = 0.0;
    for j in 0..n {
        let pinned = frame.residual_diag[j];
        let row: Vec<(usize, f64)> = (0..rank)
            .map(|l| (l, frame.axes[(j, l)]))
            .filter(|&(_, a)| a != 0.0)
            .collect();
        let full: f64 = row.iter().map(|&(l, a)| a * a * axis_var[l]).sum::<f64>() + pinned;
        if pinned > 0.0 {
            total += full;
            continue;
        }
        match row.as_slice() {
            [] => {}
            &[(l, a)] => {
                let (lo, hi) = cell.bounds[l].bounds();
                total += relu_axis_cost(frame.mean[j], a, c[j], lo, hi).min(full);
            }
            _ => {
                let mut upper = frame.mean[j];
                for &(l, a) in &row {
                    let b = &cell.bounds[l];
                    upper += if a > 0.0 { a * b.hi.value() } else { a * b.lo.value() };
                }
                if upper > 0.0 {
                    total += full;
                }
            }
        }
    }
    total
}

/// Lipschitz-weighted signature bound after an activation.
///
/// With `refine` unset, or for tanh, this is the plain signature bound
/// (Lipschitz constant 1). For ReLU with `refine` set, each cell's transport
/// cost is recomputed after the activation coordinate by coordinate: a
/// coordinate whose range over the cell is nonpositive contributes nothing,
/// and coordinates tied to a single eigen-axis are integrated exactly.
/// Merged pruned cells always keep their full cost.
pub fn activation_signature_w2_bound(
    sig: &Signature,
    activation: Activation,
    source: &GaussianMixture,
    refine: bool,
) -> Result<ActivationBound> {
    if sig.dim() != source.dim() {
        return Err(Error::Dimension {
            expected: source.dim(),
            got: sig.dim(),
            context: "signature and source mixture",
        });
    }
    let missing = sig.cells.iter().any(Option::is_none) || sig.frames.is_empty();
    if missing || !refine || activation != Activation::Relu {
        return Ok(ActivationBound {
            w2_bound: sig.w2_bound,
            metadata_missing: missing,
        });
    }
    let mut total = 0.0;
    for (cell, c) in sig.cells.iter().zip(&sig.locations) {
        let cell = cell.as_ref().expect("checked above");
        let frame = &sig.frames[cell.frame];
        let own = cell.mass * relu_cell_cost(frame, cell, c).min(cell.cost);
        total += frame.weight * (own + cell.merged_cost);
    }
    Ok(ActivationBound {
        w2_bound: total.max(0.0).sqrt().min(sig.w2_bound),
        metadata_missing: false,
    })
}

#[derive(Serialize)]
struct FrameRepr {
    component: usize,
    weight: f64,
    rank: usize,
    residual_variance: f64,
    w2sq: f64,
}

#[derive(Serialize)]
struct CellRepr<'a> {
    frame: usize,
    bounds: &'a [Interval],
    mass: f64,
    cost: f64,
    merged_mass: f64,
}

#[derive(Serialize)]
struct MetaRepr<'a> {
    w2_bound: f64,
    pruned_mass: f64,
    frames: Vec<FrameRepr>,
    cells: Vec<Option<CellRepr<'a>>>,
}

#[derive(Serialize)]
struct SignatureRepr<'a> {
    locations: Vec<&'a [f64]>,
    weights: &'a [f64],
    meta: MetaRepr<'a>,
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SignatureRepr {
            locations: self.locations.iter().map(|x| x.as_slice()).collect(),
            weights: &self.weights,
            meta: MetaRepr {
                w2_bound: self.w2_bound,
                pruned_mass: self.pruned_mass,
                frames: self
                    .frames
                    .iter()
                    .map(|f| FrameRepr {
                        component: f.component,
                        weight: f.weight,
                        rank: f.axes.ncols(),
                        residual_variance: f.residual_variance,
                        w2sq: f.w2sq,
                    })
                    .collect(),
                cells: self
                    .cells
                    .iter()
                    .map(|c| {
                        c.as_ref().map(|c| CellRepr {
                            frame: c.frame,
                            bounds: &c.bounds,
                            mass: c.mass,
                            cost: c.cost,
                            merged_mass: c.merged_mass,
                        })
                    })
                    .collect(),
            },
        }
        .serialize(s)
    }
}
