use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, slice1, slice1_mut, slice2, slice2_mut, Parameterized};
use crate::error::{Error, Result};

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`
    #[serde(with = "crate::tensor_serde::mat")]
    pub weight: Array2<f64>,
    #[serde(with = "crate::tensor_serde::vector")]
    pub bias: Array1<f64>,
}

/// Affine layers with LeakyReLU between them and a linear last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Pre-activations and activations of every layer, kept for backprop.
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`, Glorot weights and zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: glorot_uniform(w[0], w[1], w[0], w[1], rng),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    /// Input size of the first layer.
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.nrows())
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        Ok(self.forward_batch(&batch).0[0])
    }

    /// Row-wise forward pass over a batch; returns the scalar outputs.
    pub fn forward_batch(&self, x: &Array2<f64>) -> (Array1<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            let next = if k == last { z.clone() } else { z.mapv(leaky_relu) };
            cache.inputs.push(a);
            cache.pre.push(z);
            a = next;
        }
        (a.column(0).to_owned(), cache)
    }

    /// Gradients w.r.t. parameters and inputs given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array1<f64>) -> (Mlp, Array2<f64>) {
        let mut grads = self.zeros_like();
        let mut delta = d_out.view().insert_axis(Axis(1)).to_owned();
        for k in (0..self.layers.len()).rev() {
            if k != self.layers.len() - 1 {
                delta.zip_mut_with(&cache.pre[k], |d, &z| *d *= leaky_grad(z));
            }
            grads.layers[k].weight = cache.inputs[k].t().dot(&delta).as_standard_layout().into_owned();
            grads.layers[k].bias = delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[k].weight.t());
        }
        (grads, delta)
    }
}

impl Parameterized for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [slice2(&l.weight), slice1(&l.bias)])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [slice2_mut(&mut l.weight), slice1_mut(&mut l.bias)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn simple_values() {
        assert_eq!(Mlp::zeros(&[3, 4, 4, 1]).forward(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let lin = Mlp {
            layers: vec![Dense {
                weight: array![[2.0]],
                bias: array![1.0],
            }],
        };
        assert_eq!(lin.forward(&[3.0]).unwrap(), 7.0);
        assert_eq!(leaky_relu(-1.0), -0.01);
        assert!(lin.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 5, 4, 1], &mut rng);
        let x = glorot_uniform(6, 3, 1, 1, &mut rng);
        let y = array![0.3, -0.2, 0.9, 0.1, 0.0, 0.5];
        let loss = |m: &Mlp| {
            let (p, _) = m.forward_batch(&x);
            (&p - &y).mapv(|r| r * r).mean().unwrap()
        };
        let (p, cache) = mlp.forward_batch(&x);
        let d = (&p - &y) * (2.0 / y.len() as f64);
        let (g, _) = mlp.backward(&cache, &d);
        let h = 1e-6;
        let mut probe = mlp.clone();
        for (t, gs) in g.param_slices().iter().enumerate() {
            for i in 0..gs.len() {
                let orig = probe.param_slices()[t][i];
                probe.param_slices_mut()[t][i] = orig + h;
                let up = loss(&probe);
                probe.param_slices_mut()[t][i] = orig - h;
                let down = loss(&probe);
                probe.param_slices_mut()[t][i] = orig;
                let num = (up - down) / (2.0 * h);
                assert!((num - gs[i]).abs() < 1e-7, "tensor {t} entry {i}: {num} vs {}", gs[i]);
            }
        }
    }
}
