use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{expected_spectral_bound, Activation, DeterministicLinear, Layer, SnnModel, StochasticLinear};
use crate::config::TOL;
use crate::error::{Error, Result};
use crate::mixture::dropout::compress_dropout_blocked;
use crate::mixture::{compress_gmm, DiscreteDist};
use crate::quantizer::{activation_signature_w2_bound, signature_of_mixture, QuantizerTable};
use crate::stats::{Covariance, Gaussian, GaussianMixture};

/// Parameters of [`propagate`].
#[derive(Debug, Clone, Copy)]
pub struct PropagationConfig<'a> {
    /// Signature size per mixture component.
    pub signature_budget: usize,
    /// Number of components kept by compression.
    pub compression_size: usize,
    pub seed: u64,
    /// Recompute signature costs after ReLU cell by cell.
    pub activation_refinement: bool,
    /// Mask patterns kept per atom at a dropout layer (a power of two).
    pub dropout_support: usize,
    /// Hard cap on the number of atoms or components.
    pub atom_cap: usize,
    pub table: &'a QuantizerTable,
}

impl PropagationConfig<'static> {
    pub fn new(signature_budget: usize, compression_size: usize) -> Self {
        Self {
            signature_budget,
            compression_size,
            seed: 0,
            activation_refinement: false,
            dropout_support: 8,
            atom_cap: TOL.atom_cap,
            table: QuantizerTable::standard(),
        }
    }
}

/// Bound terms for one linear layer and the approximation steps before it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// 1-based index among the linear layers.
    pub k: usize,
    pub spectral_term: f64,
    pub signature_term: f64,
    pub compression_term: f64,
    pub lipschitz: f64,
    pub accumulated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundLedger {
    pub layers: Vec<LayerRecord>,
    pub bound: f64,
    /// Number of input points.
    pub d: usize,
}

impl BoundLedger {
    /// `S · (L·acc + L·R + Δ)` from the previous accumulated value.
    pub fn step(prev: f64, r: &LayerRecord) -> f64 {
        r.spectral_term * (r.lipschitz * prev + r.lipschitz * r.compression_term + r.signature_term)
    }

    /// Recomputes every accumulated value from the stored terms; exact equality.
    pub fn audit(&self) -> bool {
        let mut acc = 0.0;
        for r in &self.layers {
            let terms = [r.spectral_term, r.signature_term, r.compression_term, r.lipschitz, r.accumulated];
            if terms.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return false;
            }
            acc = Self::step(acc, r);
            if acc != r.accumulated {
                return false;
            }
        }
        acc == self.bound
    }
}

/// Exact law of `s (W x_d + b)` over the `D` stacked blocks of `point`,
/// with one weight draw shared by all blocks.
pub fn push_point_through_stochastic_linear(point: &DVector<f64>, layer: &StochasticLinear, d: usize) -> Result<Gaussian> {
    let (n_in, n_out) = (layer.n_in(), layer.n_out());
    if d == 0 || point.len() != d * n_in {
        return Err(Error::Dimension {
            expected: d * n_in,
            got: point.len(),
            context: "stacked input of a stochastic linear layer",
        });
    }
    let s = layer.scale();
    let s2 = s * s;
    let blocks: Vec<_> = (0..d).map(|b| point.rows(b * n_in, n_in)).collect();
    let mut mean = DVector::zeros(d * n_out);
    for (b, x) in blocks.iter().enumerate() {
        let y = (&layer.weight_mean * x + &layer.bias_mean) * s;
        mean.rows_mut(b * n_out, n_out).copy_from(&y);
    }
    let cross = |a: usize, c: usize, i: usize| -> f64 {
        let (xa, xc) = (&blocks[a], &blocks[c]);
        let mut t = layer.bias_var[i];
        for j in 0..n_in {
            t += layer.weight_var[(i, j)] * xa[j] * xc[j];
        }
        s2 * t
    };
    let cov = if d == 1 {
        Covariance::Diag(DVector::from_fn(n_out, |i, _| cross(0, 0, i)))
    } else {
        let mut m = DMatrix::zeros(d * n_out, d * n_out);
        for i in 0..n_out {
            for a in 0..d {
                for c in a..d {
                    let v = cross(a, c, i);
                    m[(a * n_out + i, c * n_out + i)] = v;
                    m[(c * n_out + i, a * n_out + i)] = v;
                }
            }
        }
        Covariance::Full(m)
    };
    Ok(Gaussian::new_unchecked(mean, cov))
}

fn blockwise_affine(x: &DVector<f64>, l: &DeterministicLinear, d: usize) -> DVector<f64> {
    let (n_in, n_out) = (l.n_in(), l.n_out());
    let mut y = DVector::zeros(d * n_out);
    for b in 0..d {
        let out = &l.weight * x.rows(b * n_in, n_in) + &l.bias;
        y.rows_mut(b * n_out, n_out).copy_from(&out);
    }
    y
}

fn affine_gaussian(g: &Gaussian, l: &DeterministicLinear, d: usize) -> Gaussian {
    let mean = blockwise_affine(g.mean(), l, d);
    if g.cov().is_zero() {
        return Gaussian::dirac(mean);
    }
    let big = DMatrix::<f64>::identity(d, d).kronecker(&l.weight);
    let c = &big * g.cov().to_full() * big.transpose();
    let c = (&c + c.transpose()) * 0.5;
    Gaussian::new_unchecked(mean, Covariance::Full(c))
}

enum State {
    Atoms(DiscreteDist),
    Mixture(GaussianMixture),
}

/// Bracket terms collected since the last linear layer.
#[derive(Default)]
struct Pending {
    compression: f64,
    signature: f64,
}

struct Run<'c, 'a> {
    cfg: &'c PropagationConfig<'a>,
    d: usize,
    pending: Pending,
    step: u64,
}

impl Run<'_, '_> {
    fn check_cap(&self, n: usize) -> Result<()> {
        if n > self.cfg.atom_cap {
            return Err(Error::SupportOverflow {
                size: n,
                cap: self.cfg.atom_cap,
                hint: "reduce the signature budget or the compression size M",
            });
        }
        Ok(())
    }

    /// Compress, then build signatures; the signature term is measured after
    /// `activation` when one follows.
    fn atomize(&mut self, g: &GaussianMixture, activation: Option<Activation>) -> Result<DiscreteDist> {
        self.step += 1;
        let seed = self.cfg.seed.wrapping_add(self.step);
        let comp = compress_gmm(g, self.cfg.compression_size, seed)?;
        self.pending.compression += comp.w2_bound;
        let budget = self.cfg.signature_budget;
        self.check_cap(comp.compressed.len().saturating_mul(budget))?;
        let (sig, bound) = signature_of_mixture(&comp.compressed, budget, self.cfg.table)?;
        let delta = match activation {
            Some(a) => activation_signature_w2_bound(&sig, a, &comp.compressed, self.cfg.activation_refinement)?.w2_bound,
            None => bound,
        };
        self.pending.signature += delta;
        Ok(DiscreteDist::from_parts_merged(sig.locations, sig.weights))
    }

    fn atoms(&mut self, state: State, activation: Option<Activation>) -> Result<DiscreteDist> {
        match state {
            State::Atoms(a) => Ok(a),
            State::Mixture(g) => self.atomize(&g, activation),
        }
    }
}

/// Propagates the joint law at `points` through the network as a GMM.
///
/// Returns the output mixture on the stacked `D · n_out` outputs and a
/// ledger whose final value bounds W2 to the true network law.
pub fn propagate(model: &SnnModel, points: &[DVector<f64>], cfg: &PropagationConfig) -> Result<(GaussianMixture, BoundLedger)> {
    if cfg.signature_budget == 0 || cfg.compression_size == 0 {
        return Err(Error::invalid("signature budget and compression size must be positive"));
    }
    let d = points.len();
    if d == 0 {
        return Err(Error::invalid("propagate needs at least one input point"));
    }
    if let Some(p) = points.iter().find(|p| p.len() != model.input_dim()) {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: p.len(),
            context: "input point",
        });
    }
    let stacked = DVector::from_iterator(d * model.input_dim(), points.iter().flat_map(|p| p.iter().copied()));
    let mut state = State::Atoms(DiscreteDist::dirac(stacked));
    let mut run = Run {
        cfg,
        d,
        pending: Pending::default(),
        step: 0,
    };
    let mut acc = 0.0;
    let mut records = Vec::new();
    let mut lipschitz = 1.0;
    for layer in model.layers() {
        state = match layer {
            Layer::Activation(a) => {
                let atoms = run.atoms(state, Some(*a))?;
                lipschitz *= a.lipschitz();
                let locs = atoms.locations().iter().map(|x| x.map(|v| a.apply(v))).collect();
                State::Atoms(DiscreteDist::from_parts_merged(locs, atoms.weights().to_vec()))
            }
            Layer::Dropout { keep_prob } => {
                let atoms = run.atoms(state, None)?;
                if *keep_prob == 1.0 {
                    State::Atoms(atoms)
                } else {
                    let width = atoms.dim() / run.d;
                    let full = if width >= usize::BITS as usize - 1 { usize::MAX } else { 1usize << width };
                    let support = prev_power_of_two(cfg.dropout_support.max(1)).min(full);
                    let c = compress_dropout_blocked(&atoms, *keep_prob, support, run.d)?;
                    run.check_cap(c.compressed.len())?;
                    run.pending.compression += c.w2_bound;
                    State::Atoms(c.compressed)
                }
            }
            Layer::StochasticLinear(l) => {
                let atoms = run.atoms(state, None)?;
                run.check_cap(atoms.len())?;
                let comps = atoms
                    .locations()
                    .iter()
                    .map(|x| push_point_through_stochastic_linear(x, l, d))
                    .collect::<Result<Vec<_>>>()?;
                State::Mixture(GaussianMixture::from_unnormalized(atoms.weights().to_vec(), comps))
            }
            Layer::DeterministicLinear(l) => match state {
                State::Atoms(a) => {
                    let locs = a.locations().iter().map(|x| blockwise_affine(x, l, d)).collect();
                    State::Atoms(DiscreteDist::from_parts_merged(locs, a.weights().to_vec()))
                }
                State::Mixture(g) => {
                    let comps = g.components().iter().map(|c| affine_gaussian(c, l, d)).collect();
                    State::Mixture(GaussianMixture::from_unnormalized(g.weights().to_vec(), comps))
                }
            },
        };
        if layer.is_linear() {
            let mut rec = LayerRecord {
                k: records.len() + 1,
                spectral_term: expected_spectral_bound(layer, d)?,
                signature_term: run.pending.signature,
                compression_term: run.pending.compression,
                lipschitz,
                accumulated: 0.0,
            };
            rec.accumulated = BoundLedger::step(acc, &rec);
            if !rec.accumulated.is_finite() {
                return Err(Error::Numerical(format!("bound overflowed at linear layer {}", rec.k)));
            }
            acc = rec.accumulated;
            records.push(rec);
            run.pending = Pending::default();
            lipschitz = 1.0;
        }
    }
    let out = match state {
        State::Mixture(g) => g,
        State::Atoms(a) => {
            let comps = a.locations().iter().cloned().map(Gaussian::dirac).collect();
            GaussianMixture::from_unnormalized(a.weights().to_vec(), comps)
        }
    };
    Ok((
        out,
        BoundLedger {
            layers: records,
            bound: acc,
            d,
        },
    ))
}

fn prev_power_of_two(n: usize) -> usize {
    1usize << (usize::BITS - 1 - n.leading_zeros())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::model::SnnModel;

    fn sl(mean: &[f64], var: &[f64], rows: usize, bias_var: f64, ntk: bool) -> Layer {
        let cols = mean.len() / rows;
        Layer::StochasticLinear(StochasticLinear {
            weight_mean: DMatrix::from_row_slice(rows, cols, mean),
            weight_var: DMatrix::from_row_slice(rows, cols, var),
            bias_mean: DVector::from_element(rows, 0.1),
            bias_var: DVector::from_element(rows, bias_var),
            ntk,
        })
    }

    fn one_hidden(act: Activation) -> SnnModel {
        SnnModel::new(
            2,
            vec![
                sl(&[0.5, -0.3, 0.8, 0.2, -0.6, 0.9], &[0.05, 0.02, 0.03, 0.04, 0.01, 0.02], 3, 0.01, false),
                Layer::Activation(act),
                sl(&[1.0, -0.5, 0.7], &[0.02, 0.03, 0.01], 1, 0.01, false),
            ],
        )
        .unwrap()
    }

    #[test]
    fn scalar_push() {
        let Layer::StochasticLinear(l) = sl(&[2.0], &[0.5], 1, 0.25, false) else { unreachable!() };
        let g = push_point_through_stochastic_linear(&DVector::from_element(1, 3.0), &l, 1).unwrap();
        assert!((g.mean()[0] - (6.0 + 0.1)).abs() < 1e-15);
        assert!((g.cov().get(0, 0) - (0.5 * 9.0 + 0.25)).abs() < 1e-15);
        assert!(push_point_through_stochastic_linear(&DVector::from_element(2, 3.0), &l, 1).is_err());
    }

    #[test]
    fn zero_variance_push_is_dirac() {
        let Layer::StochasticLinear(l) = sl(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 2, 0.0, true) else { unreachable!() };
        let g = push_point_through_stochastic_linear(&DVector::from_vec(vec![1.0, 1.0]), &l, 1).unwrap();
        assert!(g.cov().is_zero());
        let s = 1.0 / 2f64.sqrt();
        assert!((g.mean()[1] - s * 7.1).abs() < 1e-15);
    }

    #[test]
    fn duplicate_blocks_are_perfectly_correlated() {
        let Layer::StochasticLinear(l) = sl(&[1.0, -1.0], &[0.3, 0.2], 1, 0.1, false) else { unreachable!() };
        let x = DVector::from_vec(vec![0.5, 2.0, 0.5, 2.0]);
        let g = push_point_through_stochastic_linear(&x, &l, 2).unwrap();
        let c = g.cov().to_full();
        assert_eq!(c[(0, 0)], c[(0, 1)]);
        assert_eq!(c[(1, 1)], c[(0, 1)]);
        assert!((c[(0, 0)] - (0.3 * 0.25 + 0.2 * 4.0 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_network_is_dirac() {
        let m = SnnModel::new(
            2,
            vec![
                sl(&[0.5, -0.3, 0.8, 0.2], &[0.0; 4], 2, 0.0, false),
                Layer::Activation(Activation::Tanh),
                Layer::DeterministicLinear(DeterministicLinear {
                    weight: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
                    bias: DVector::from_element(1, -1.0),
                }),
            ],
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let (g, ledger) = propagate(&m, std::slice::from_ref(&x), &PropagationConfig::new(4, 2)).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.components()[0].cov().is_zero());
        assert!((g.components()[0].mean()[0] - m.forward_mean(&x).unwrap()[0]).abs() < 1e-15);
        assert_eq!(ledger.bound, 0.0);
        assert!(ledger.audit());
    }

    #[test]
    fn single_layer_is_exact() {
        let m = SnnModel::new(2, vec![sl(&[0.5, -0.3, 0.8, 0.2], &[0.1; 4], 2, 0.05, true)]).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let (g, ledger) = propagate(&m, std::slice::from_ref(&x), &PropagationConfig::new(4, 2)).unwrap();
        let Layer::StochasticLinear(l) = &m.layers()[0] else { unreachable!() };
        assert_eq!(g.components()[0], push_point_through_stochastic_linear(&x, l, 1).unwrap());
        assert_eq!(ledger.bound, 0.0);
        assert_eq!(ledger.layers.len(), 1);
    }

    #[test]
    fn ledger_recursion_and_audit() {
        let m = one_hidden(Activation::Relu);
        let x = DVector::from_vec(vec![1.0, -0.5]);
        let (_, mut ledger) = propagate(&m, &[x], &PropagationConfig::new(6, 3)).unwrap();
        assert_eq!(ledger.layers.len(), 2);
        assert!(ledger.bound > 0.0);
        assert!(ledger.audit());
        let r = &ledger.layers[1];
        assert_eq!(r.accumulated, r.spectral_term * (r.compression_term + r.signature_term));
        ledger.layers[1].accumulated *= 1.0 + 1e-15;
        assert!(!ledger.audit());
    }

    #[test]
    fn bound_shrinks_with_budget() {
        let m = one_hidden(Activation::Tanh);
        let x = DVector::from_vec(vec![0.7, 0.4]);
        let mut prev = f64::INFINITY;
        for b in [2, 4, 8, 16, 32, 64, 128] {
            let (_, l) = propagate(&m, std::slice::from_ref(&x), &PropagationConfig::new(b, 4)).unwrap();
            assert!(l.bound <= prev, "budget {b}: {} > {prev}", l.bound);
            prev = l.bound;
        }
    }

    #[test]
    fn refinement_never_loosens() {
        let m = one_hidden(Activation::Relu);
        let x = DVector::from_vec(vec![0.7, 0.4]);
        let mut cfg = PropagationConfig::new(8, 2);
        let (_, plain) = propagate(&m, std::slice::from_ref(&x), &cfg).unwrap();
        cfg.activation_refinement = true;
        let (_, refined) = propagate(&m, &[x], &cfg).unwrap();
        assert!(refined.bound <= plain.bound);
    }

    #[test]
    fn duplicated_inputs_have_consistent_marginals() {
        let m = one_hidden(Activation::Tanh);
        let x = DVector::from_vec(vec![0.7, 0.4]);
        let cfg = PropagationConfig::new(8, 3);
        let (g1, _) = propagate(&m, std::slice::from_ref(&x), &cfg).unwrap();
        let (g2, l2) = propagate(&m, &[x.clone(), x], &cfg).unwrap();
        assert_eq!(l2.d, 2);
        let (m1, c1) = (g1.mean(), g1.covariance());
        let (m2, c2) = (g2.mean(), g2.covariance());
        for b in 0..2 {
            assert!((m2[b] - m1[0]).abs() < 1e-9);
            assert!((c2[(b, b)] - c1[(0, 0)]).abs() < 1e-9);
        }
        assert!((g1.second_moment() * 2.0 - g2.second_moment()).abs() < 1e-9);
    }

    #[test]
    fn dropout_terms_enter_compression() {
        let mut layers = one_hidden(Activation::Relu).layers().to_vec();
        layers.insert(2, Layer::Dropout { keep_prob: 0.8 });
        let m = SnnModel::new(2, layers).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let mut cfg = PropagationConfig::new(4, 2);
        cfg.dropout_support = 2;
        let (_, with_drop) = propagate(&m, std::slice::from_ref(&x), &cfg).unwrap();
        cfg.dropout_support = 8;
        let (_, full) = propagate(&m, &[x], &cfg).unwrap();
        assert!(with_drop.layers[1].compression_term > full.layers[1].compression_term);
        assert!(with_drop.audit() && full.audit());
    }

    #[test]
    fn atom_cap_is_enforced() {
        let m = one_hidden(Activation::Tanh);
        let mut cfg = PropagationConfig::new(64, 3);
        cfg.atom_cap = 10;
        let err = propagate(&m, &[DVector::from_vec(vec![1.0, 1.0])], &cfg).unwrap_err();
        assert!(matches!(err, Error::SupportOverflow { .. }));
    }
}
