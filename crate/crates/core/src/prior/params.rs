use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::{Layer, SnnModel, StochasticLinear};

/// How variance slots of a template are grouped into tunable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One variance for every stochastic weight and bias.
    Shared,
    /// One variance for the weights and one for the biases of each layer.
    #[default]
    PerLayer,
    /// One variance per weight and per bias.
    PerParameter,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Granularity::Shared),
            "per-layer" | "per_layer" => Ok(Granularity::PerLayer),
            "per-parameter" | "per_parameter" => Ok(Granularity::PerParameter),
            _ => Err(Error::invalid(format!(
                "unknown granularity {s:?}; expected shared, per-layer or per-parameter"
            ))),
        }
    }
}

/// Log-variances of a zero-mean mean-field prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub granularity: Granularity,
    pub log_variances: Vec<f64>,
}

fn stochastic_layers(template: &SnnModel) -> impl Iterator<Item = (usize, &StochasticLinear)> {
    template.layers().iter().enumerate().filter_map(|(i, l)| match l {
        Layer::StochasticLinear(s) => Some((i, s)),
        _ => None,
    })
}

impl PriorParams {
    /// Number of parameters `granularity` assigns to `template`.
    pub fn count(template: &SnnModel, granularity: Granularity) -> usize {
        let layers = stochastic_layers(template);
        match granularity {
            Granularity::Shared => usize::from(layers.count() > 0),
            Granularity::PerLayer => 2 * layers.count(),
            Granularity::PerParameter => layers.map(|(_, l)| l.weight_var.len() + l.bias_var.len()).sum(),
        }
    }

    /// Reads the template's variances, averaging inside each group.
    pub fn from_template(template: &SnnModel, granularity: Granularity) -> Result<Self> {
        check_zero_mean(template)?;
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for (_, l) in stochastic_layers(template) {
            match granularity {
                Granularity::Shared => {
                    if groups.is_empty() {
                        groups.push(Vec::new());
                    }
                    groups[0].extend(l.weight_var.iter().chain(l.bias_var.iter()));
                }
                Granularity::PerLayer => {
                    groups.push(l.weight_var.iter().copied().collect());
                    groups.push(l.bias_var.iter().copied().collect());
                }
                Granularity::PerParameter => {
                    groups.extend(row_major(&l.weight_var).into_iter().chain(l.bias_var.iter().copied()).map(|v| vec![v]));
                }
            }
        }
        if groups.is_empty() {
            return Err(Error::invalid("template has no stochastic linear layer to tune"));
        }
        let mut log_variances = Vec::with_capacity(groups.len());
        for (i, g) in groups.iter().enumerate() {
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            if !(mean > 0.0) {
                return Err(Error::invalid(format!(
                    "{} has zero prior variance; the template needs positive variances",
                    describe(template, granularity, i)
                )));
            }
            log_variances.push(mean.ln());
        }
        Ok(Self {
            granularity,
            log_variances,
        })
    }

    /// The template with its variances replaced by `exp(log_variances)`.
    pub fn instantiate(&self, template: &SnnModel) -> Result<SnnModel> {
        let expected = Self::count(template, self.granularity);
        if self.log_variances.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: self.log_variances.len(),
                context: "prior log-variances",
            });
        }
        let vars: Vec<f64> = self.log_variances.iter().map(|x| x.exp()).collect();
        if let Some(i) = vars.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numerical(format!(
                "{} has log-variance {} whose exponential is not a finite positive number",
                describe(template, self.granularity, i),
                self.log_variances[i]
            )));
        }
        let mut next = 0;
        let mut take = || {
            let v = vars[next];
            next += 1;
            v
        };
        let mut layers = template.layers().to_vec();
        let mut shared = None;
        for layer in &mut layers {
            let Layer::StochasticLinear(l) = layer else { continue };
            match self.granularity {
                Granularity::Shared => {
                    let v = *shared.get_or_insert_with(&mut take);
                    l.weight_var.fill(v);
                    l.bias_var.fill(v);
                }
                Granularity::PerLayer => {
                    l.weight_var.fill(take());
                    l.bias_var.fill(take());
                }
                Granularity::PerParameter => {
                    let (r, c) = l.weight_var.shape();
                    for i in 0..r {
                        for j in 0..c {
                            l.weight_var[(i, j)] = take();
                        }
                    }
                    for v in l.bias_var.iter_mut() {
                        *v = take();
                    }
                }
            }
        }
        SnnModel::new(template.input_dim(), layers)
    }
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

fn check_zero_mean(template: &SnnModel) -> Result<()> {
    for (i, l) in stochastic_layers(template) {
        if l.weight_mean.iter().chain(l.bias_mean.iter()).any(|&m| m != 0.0) {
            return Err(Error::invalid(format!(
                "layer {i} has nonzero means; prior templates must be zero-mean"
            )));
        }
    }
    Ok(())
}

/// Human-readable name of parameter `idx`.
pub(crate) fn describe(template: &SnnModel, granularity: Granularity, idx: usize) -> String {
    if granularity == Granularity::Shared {
        return "the shared prior variance".into();
    }
    let mut offset = 0;
    for (layer, l) in stochastic_layers(template) {
        let (nw, nb) = match granularity {
            Granularity::PerLayer => (1, 1),
            _ => (l.weight_var.len(), l.bias_var.len()),
        };
        if idx < offset + nw {
            return match granularity {
                Granularity::PerLayer => format!("layer {layer} weights"),
                _ => {
                    let k = idx - offset;
                    format!("layer {layer} weight ({}, {})", k / l.n_in(), k % l.n_in())
                }
            };
        }
        if idx < offset + nw + nb {
            return match granularity {
                Granularity::PerLayer => format!("layer {layer} biases"),
                _ => format!("layer {layer} bias {}", idx - offset - nw),
            };
        }
        offset += nw + nb;
    }
    format!("parameter {idx}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::Activation;
    use nalgebra::{DMatrix, DVector};

    fn template() -> SnnModel {
        let sl = |o: usize, i: usize, v: f64| {
            Layer::StochasticLinear(StochasticLinear {
                weight_mean: DMatrix::zeros(o, i),
                weight_var: DMatrix::from_element(o, i, v),
                bias_mean: DVector::zeros(o),
                bias_var: DVector::from_element(o, 2.0 * v),
                ntk: false,
            })
        };
        SnnModel::new(1, vec![sl(3, 1, 1.0), Layer::Activation(Activation::Tanh), sl(1, 3, 0.5)]).unwrap()
    }

    #[test]
    fn counts() {
        let t = template();
        assert_eq!(PriorParams::count(&t, Granularity::Shared), 1);
        assert_eq!(PriorParams::count(&t, Granularity::PerLayer), 4);
        assert_eq!(PriorParams::count(&t, Granularity::PerParameter), 3 + 3 + 3 + 1);
    }

    #[test]
    fn round_trip_per_layer_and_per_parameter() {
        let t = template();
        for g in [Granularity::PerLayer, Granularity::PerParameter] {
            let p = PriorParams::from_template(&t, g).unwrap();
            let back = p.instantiate(&t).unwrap();
            for (a, b) in t.layers().iter().zip(back.layers()) {
                if let (Layer::StochasticLinear(a), Layer::StochasticLinear(b)) = (a, b) {
                    assert!((&a.weight_var - &b.weight_var).amax() < 1e-15);
                    assert!((&a.bias_var - &b.bias_var).amax() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn shared_averages() {
        let t = template();
        let p = PriorParams::from_template(&t, Granularity::Shared).unwrap();
        // (3·1 + 3·2 + 3·0.5 + 1·1) / 10
        assert!((p.log_variances[0].exp() - 1.15).abs() < 1e-12);
        let m = p.instantiate(&t).unwrap();
        let Layer::StochasticLinear(l) = &m.layers()[2] else { panic!() };
        assert!(l.weight_var.iter().chain(l.bias_var.iter()).all(|&v| (v - 1.15).abs() < 1e-12));
    }

    #[test]
    fn errors_name_the_block() {
        let t = template();
        let mut p = PriorParams::from_template(&t, Granularity::PerLayer).unwrap();
        p.log_variances[3] = 1e6;
        let e = p.instantiate(&t).unwrap_err().to_string();
        assert!(e.contains("layer 2 biases"), "{e}");
        p.log_variances.pop();
        assert!(matches!(p.instantiate(&t), Err(Error::Dimension { .. })));
        assert_eq!(describe(&t, Granularity::PerParameter, 7), "layer 2 weight (0, 1)");
        assert_eq!(describe(&t, Granularity::PerParameter, 4), "layer 0 bias 1");
        assert_eq!(describe(&t, Granularity::PerParameter, 9), "layer 2 bias 0");
    }

    #[test]
    fn rejects_nonzero_mean_and_zero_variance() {
        let mut layers = template().layers().to_vec();
        if let Layer::StochasticLinear(l) = &mut layers[0] {
            l.bias_mean[1] = 0.1;
        }
        let t = SnnModel::new(1, layers.clone()).unwrap();
        assert!(PriorParams::from_template(&t, Granularity::PerLayer).is_err());
        if let Layer::StochasticLinear(l) = &mut layers[0] {
            l.bias_mean[1] = 0.0;
            l.bias_var.fill(0.0);
        }
        let t = SnnModel::new(1, layers).unwrap();
        let e = PriorParams::from_template(&t, Granularity::PerLayer).unwrap_err().to_string();
        assert!(e.contains("layer 0 biases"), "{e}");
    }
}
