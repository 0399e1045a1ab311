use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::{Layer, SnnModel};
use crate::error::{Error, Result};

/// Draws `n_samples` joint outputs of the network at `points`.
///
/// Each sample uses one weight and mask draw shared by every point, from a
/// stream keyed by `(seed, sample index)`. Rows are the stacked outputs.
pub fn sample_network(model: &SnnModel, points: &[DVector<f64>], n_samples: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::invalid("sample_network needs at least one input point"));
    }
    if let Some(p) = points.iter().find(|p| p.len() != model.input_dim()) {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: p.len(),
            context: "input point",
        });
    }
    let out_dim = model.output_dim();
    let mut rows = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut h: Vec<DVector<f64>> = points.to_vec();
        for layer in model.layers() {
            match layer {
                Layer::StochasticLinear(l) => {
                    let sc = l.scale();
                    let w = l.weight_mean.zip_map(&l.weight_var, |m, v| m + v.sqrt() * normal(&mut rng));
                    let b = l.bias_mean.zip_map(&l.bias_var, |m, v| m + v.sqrt() * normal(&mut rng));
                    for x in &mut h {
                        *x = (&w * &*x + &b) * sc;
                    }
                }
                Layer::DeterministicLinear(l) => {
                    for x in &mut h {
                        *x = &l.weight * &*x + &l.bias;
                    }
                }
                Layer::Dropout { keep_prob } => {
                    let n = h[0].len();
                    let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < *keep_prob).collect();
                    for x in &mut h {
                        for (v, &keep) in x.iter_mut().zip(&mask) {
                            if !keep {
                                *v = 0.0;
                            }
                        }
                    }
                }
                Layer::Activation(a) => {
                    for x in &mut h {
                        x.apply(|v| *v = a.apply(*v));
                    }
                }
            }
        }
        rows.push(DVector::from_iterator(points.len() * out_dim, h.iter().flat_map(|x| x.iter().copied())));
    }
    Ok(rows)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::model::{Activation, StochasticLinear};
    use nalgebra::DMatrix;

    fn model(var: f64, dropout: bool) -> SnnModel {
        let mut layers = vec![
            Layer::StochasticLinear(StochasticLinear {
                weight_mean: DMatrix::from_row_slice(2, 1, &[1.0, -2.0]),
                weight_var: DMatrix::from_element(2, 1, var),
                bias_mean: DVector::from_vec(vec![0.5, 0.0]),
                bias_var: DVector::from_element(2, var),
                ntk: false,
            }),
            Layer::Activation(Activation::Relu),
        ];
        if dropout {
            layers.push(Layer::Dropout { keep_prob: 0.5 });
        }
        layers.push(Layer::StochasticLinear(StochasticLinear {
            weight_mean: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            weight_var: DMatrix::from_element(1, 2, var),
            bias_mean: DVector::zeros(1),
            bias_var: DVector::zeros(1),
            ntk: true,
        }));
        SnnModel::new(1, layers).unwrap()
    }

    #[test]
    fn deterministic_samples_equal_forward_pass() {
        let m = model(0.0, false);
        let x = DVector::from_element(1, 0.8);
        let fwd = m.forward_mean(&x).unwrap();
        for row in sample_network(&m, &[x], 5, 1).unwrap() {
            assert_eq!(row, fwd);
        }
    }

    #[test]
    fn duplicate_points_share_draws() {
        let m = model(0.4, true);
        let x = DVector::from_element(1, -0.3);
        for row in sample_network(&m, &[x.clone(), x], 50, 9).unwrap() {
            assert_eq!(row[0].to_bits(), row[1].to_bits());
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let m = model(0.4, true);
        let x = [DVector::from_element(1, 1.0)];
        let a = sample_network(&m, &x, 20, 3).unwrap();
        let b = sample_network(&m, &x, 30, 3).unwrap();
        assert_eq!(a[..], b[..20]);
        assert_ne!(a, sample_network(&m, &x, 20, 4).unwrap());
    }
}
