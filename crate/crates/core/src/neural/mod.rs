//! Dense-layer building blocks with hand-written gradients.
//!
//! Every trainable structure implements [`Parameterized`], exposing its
//! tensors as flat slices in a fixed order. A gradient bundle is simply a
//! value of the same type holding derivatives instead of weights, so the
//! optimizer and the clipping code work on any model.

pub mod decoder;
pub mod encoder;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod train;

use ndarray::{Array1, Array2};
use rand::Rng;

pub use decoder::{bilinear_score, distmult_score, Decoder};
pub use encoder::{EncoderParams, Propagation};
pub use mlp::{leaky_relu, Mlp, LEAKY_SLOPE};
pub use model::{DeepGravityObjective, GraphModel, GraphObjective};
pub use optim::{clip_grad_norm, Adam};
pub use train::{train, EpochRecord, History, Objective, TrainConfig, TrainOutcome};

pub trait Parameterized: Clone {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// Same shapes, every entry zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.param_slices_mut() {
            s.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn global_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("contiguous vector")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("contiguous vector")
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}
