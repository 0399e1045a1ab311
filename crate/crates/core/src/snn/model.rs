use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::gaussian::{matrix_from_rows, matrix_to_rows};
use crate::stats::linalg::spectral_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Global Lipschitz constant.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

/// Mean-field Gaussian linear layer `y = s (W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticLinear {
    pub weight_mean: DMatrix<f64>,
    pub weight_var: DMatrix<f64>,
    pub bias_mean: DVector<f64>,
    pub bias_var: DVector<f64>,
    /// Scale by `1/√n_in`.
    pub ntk: bool,
}

impl StochasticLinear {
    pub fn n_in(&self) -> usize {
        self.weight_mean.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight_mean.nrows()
    }

    pub fn scale(&self) -> f64 {
        if self.ntk {
            1.0 / (self.n_in() as f64).sqrt()
        } else {
            1.0
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.weight_var.iter().all(|&v| v == 0.0) && self.bias_var.iter().all(|&v| v == 0.0)
    }
}

/// Fixed affine layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicLinear {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DeterministicLinear {
    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    StochasticLinear(StochasticLinear),
    DeterministicLinear(DeterministicLinear),
    /// Bernoulli mask with keep probability θ.
    Dropout { keep_prob: f64 },
    Activation(Activation),
}

impl Layer {
    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::StochasticLinear(_) | Layer::DeterministicLinear(_))
    }
}

/// `√D · E[‖W‖²]^{1/2}` upper bound for the layer applied to `d` stacked inputs.
///
/// Stochastic layers use `s (√Σ var + ‖M‖₂)`; deterministic ones `‖W‖₂`.
pub fn expected_spectral_bound(layer: &Layer, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("input set must be nonempty"));
    }
    let root_d = (d as f64).sqrt();
    match layer {
        Layer::StochasticLinear(l) => {
            let frob = l.weight_var.sum().max(0.0).sqrt();
            Ok(root_d * l.scale() * (frob + spectral_norm(&l.weight_mean)))
        }
        Layer::DeterministicLinear(l) => Ok(root_d * spectral_norm(&l.weight)),
        _ => Err(Error::invalid("spectral bound is defined for linear layers only")),
    }
}

fn all_finite<const N: usize>(parts: [&[f64]; N]) -> bool {
    parts.iter().all(|p| p.iter().all(|x| x.is_finite()))
}

/// A feed-forward stochastic network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct SnnModel {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl SnnModel {
    /// Checks that dimensions chain, variances are nonnegative, keep
    /// probabilities lie in (0, 1], activations are not adjacent and the
    /// last layer is linear.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if !layers.iter().any(Layer::is_linear) {
            return Err(Error::invalid("a model needs at least one linear layer"));
        }
        if !layers.last().is_some_and(Layer::is_linear) {
            return Err(Error::invalid("the last layer must be linear"));
        }
        let mut width = input_dim;
        let mut prev_activation = false;
        for (i, layer) in layers.iter().enumerate() {
            let chain = |n_in: usize| {
                if n_in == width {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("layer {i} expects {n_in} inputs but receives {width}")))
                }
            };
            match layer {
                Layer::StochasticLinear(l) => {
                    chain(l.n_in())?;
                    if l.weight_var.shape() != l.weight_mean.shape()
                        || l.bias_mean.len() != l.n_out()
                        || l.bias_var.len() != l.n_out()
                    {
                        return Err(Error::invalid(format!("layer {i} has inconsistent shapes")));
                    }
                    if !all_finite([l.weight_mean.as_slice(), l.weight_var.as_slice(), l.bias_mean.as_slice(), l.bias_var.as_slice()]) {
                        return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
                    }
                    if l.weight_var.iter().chain(l.bias_var.iter()).any(|&v| v < 0.0) {
                        return Err(Error::invalid(format!("layer {i} has negative variances")));
                    }
                    if l.n_out() == 0 {
                        return Err(Error::invalid(format!("layer {i} has no outputs")));
                    }
                    width = l.n_out();
                }
                Layer::DeterministicLinear(l) => {
                    chain(l.n_in())?;
                    if l.bias.len() != l.n_out() {
                        return Err(Error::invalid(format!("layer {i} has inconsistent shapes")));
                    }
                    if !all_finite([l.weight.as_slice(), l.bias.as_slice()]) {
                        return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
                    }
                    if l.n_out() == 0 {
                        return Err(Error::invalid(format!("layer {i} has no outputs")));
                    }
                    width = l.n_out();
                }
                Layer::Dropout { keep_prob } => {
                    if !(*keep_prob > 0.0 && *keep_prob <= 1.0) {
                        return Err(Error::invalid(format!("layer {i}: keep_prob must lie in (0, 1]")));
                    }
                }
                Layer::Activation(_) => {
                    if prev_activation {
                        return Err(Error::invalid(format!("layer {i}: adjacent activation layers")));
                    }
                }
            }
            prev_activation = matches!(layer, Layer::Activation(_));
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::StochasticLinear(l) => Some(l.n_out()),
                Layer::DeterministicLinear(l) => Some(l.n_out()),
                _ => None,
            })
            .expect("validated model has a linear layer")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Forward pass with mean weights and dropout disabled.
    pub fn forward_mean(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
                context: "model input",
            });
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::StochasticLinear(l) => (&l.weight_mean * &h + &l.bias_mean) * l.scale(),
                Layer::DeterministicLinear(l) => &l.weight * &h + &l.bias,
                Layer::Dropout { .. } => h,
                Layer::Activation(a) => h.map(|v| a.apply(v)),
            };
        }
        Ok(h)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerRepr {
    StochasticLinear {
        weight_mean: Vec<Vec<f64>>,
        weight_var: Vec<Vec<f64>>,
        bias_mean: Vec<f64>,
        bias_var: Vec<f64>,
        #[serde(default)]
        ntk: bool,
    },
    Linear {
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Dropout {
        keep_prob: f64,
    },
    Activation {
        kind: Activation,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    input_dim: usize,
    layers: Vec<LayerRepr>,
}

impl TryFrom<ModelRepr> for SnnModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let layers = r
            .layers
            .into_iter()
            .map(|l| {
                Ok(match l {
                    LayerRepr::StochasticLinear {
                        weight_mean,
                        weight_var,
                        bias_mean,
                        bias_var,
                        ntk,
                    } => Layer::StochasticLinear(StochasticLinear {
                        weight_mean: matrix_from_rows(&weight_mean, "weight_mean rows")?,
                        weight_var: matrix_from_rows(&weight_var, "weight_var rows")?,
                        bias_mean: DVector::from_vec(bias_mean),
                        bias_var: DVector::from_vec(bias_var),
                        ntk,
                    }),
                    LayerRepr::Linear { weight, bias } => Layer::DeterministicLinear(DeterministicLinear {
                        weight: matrix_from_rows(&weight, "weight rows")?,
                        bias: DVector::from_vec(bias),
                    }),
                    LayerRepr::Dropout { keep_prob } => Layer::Dropout { keep_prob },
                    LayerRepr::Activation { kind } => Layer::Activation(kind),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SnnModel::new(r.input_dim, layers)
    }
}

impl From<SnnModel> for ModelRepr {
    fn from(m: SnnModel) -> Self {
        let layers = m
            .layers
            .into_iter()
            .map(|l| match l {
                Layer::StochasticLinear(l) => LayerRepr::StochasticLinear {
                    weight_mean: matrix_to_rows(&l.weight_mean),
                    weight_var: matrix_to_rows(&l.weight_var),
                    bias_mean: l.bias_mean.iter().copied().collect(),
                    bias_var: l.bias_var.iter().copied().collect(),
                    ntk: l.ntk,
                },
                Layer::DeterministicLinear(l) => LayerRepr::Linear {
                    weight: matrix_to_rows(&l.weight),
                    bias: l.bias.iter().copied().collect(),
                },
                Layer::Dropout { keep_prob } => LayerRepr::Dropout { keep_prob },
                Layer::Activation(kind) => LayerRepr::Activation { kind },
            })
            .collect();
        ModelRepr {
            input_dim: m.input_dim,
            layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"{"input_dim":2,"layers":[
        {"type":"stochastic_linear","weight_mean":[[1,0],[0,1],[1,1]],"weight_var":[[0.1,0.1],[0.1,0.1],[0.1,0.1]],"bias_mean":[0,0,0],"bias_var":[0.01,0.01,0.01],"ntk":true},
        {"type":"activation","kind":"tanh"},
        {"type":"dropout","keep_prob":0.9},
        {"type":"linear","weight":[[1,-1,0.5]],"bias":[0.2]}]}"#;

    #[test]
    fn json_round_trip() {
        let m = SnnModel::from_json(TINY).unwrap();
        assert_eq!(m.layers().len(), 4);
        assert_eq!(m.output_dim(), 1);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(SnnModel::from_json(&s).unwrap(), m);
    }

    #[test]
    fn validation() {
        let bad_chain = TINY.replace("[[1,-1,0.5]]", "[[1,-1]]");
        assert!(SnnModel::from_json(&bad_chain).is_err());
        let neg = TINY.replace("\"bias_var\":[0.01,0.01,0.01]", "\"bias_var\":[0.01,-0.01,0.01]");
        assert!(SnnModel::from_json(&neg).is_err());
        let theta = TINY.replace("0.9", "0.0");
        assert!(SnnModel::from_json(&theta).is_err());
        let adjacent = TINY.replace(r#"{"type":"dropout","keep_prob":0.9}"#, r#"{"type":"activation","kind":"relu"}"#);
        assert!(SnnModel::from_json(&adjacent).is_err());
        let last = TINY.replace(r#"{"type":"linear","weight":[[1,-1,0.5]],"bias":[0.2]}"#, r#"{"type":"activation","kind":"relu"}"#);
        assert!(SnnModel::from_json(&last).is_err());
        assert!(SnnModel::from_json(&TINY.replace("\"ntk\"", "\"ntq\"")).is_err());
    }

    fn layer(mean: DMatrix<f64>, var: f64, ntk: bool) -> Layer {
        let (r, c) = mean.shape();
        Layer::StochasticLinear(StochasticLinear {
            weight_mean: mean,
            weight_var: DMatrix::from_element(r, c, var),
            bias_mean: DVector::zeros(r),
            bias_var: DVector::zeros(r),
            ntk,
        })
    }

    #[test]
    fn spectral_bound_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((expected_spectral_bound(&layer(m.clone(), 0.0, false), 1).unwrap() - 4.0).abs() < 1e-12);
        let n = 5;
        let v = 0.3f64;
        let z = expected_spectral_bound(&layer(DMatrix::zeros(n, n), v, false), 1).unwrap();
        assert!((z - n as f64 * v.sqrt()).abs() < 1e-12);
        let ntk = expected_spectral_bound(&layer(DMatrix::zeros(n, n), v, true), 4).unwrap();
        assert!((ntk - 2.0 * v.sqrt() * (n as f64).sqrt()).abs() < 1e-12);
        let det = Layer::DeterministicLinear(DeterministicLinear { weight: m, bias: DVector::zeros(2) });
        assert!((expected_spectral_bound(&det, 9).unwrap() - 12.0).abs() < 1e-12);
        assert!(expected_spectral_bound(&Layer::Dropout { keep_prob: 0.5 }, 1).is_err());
    }

    #[test]
    fn forward_mean_pass() {
        let m = SnnModel::from_json(TINY).unwrap();
        let y = m.forward_mean(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let h = [(s * 1.0).tanh(), (s * 2.0).tanh(), (s * 3.0).tanh()];
        assert!((y[0] - (h[0] - h[1] + 0.5 * h[2] + 0.2)).abs() < 1e-15);
    }
}
