//! Pair scoring functions on node embeddings.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{glorot_uniform, slice1, slice1_mut, slice2, slice2_mut, Parameterized};

/// `sum_i u_i r_i v_i`. The product `u_i * v_i` is formed first so that
/// swapping `u` and `v` gives a bit-identical result.
pub fn bilinear_score(u: ArrayView1<f64>, v: ArrayView1<f64>, r: ArrayView1<f64>) -> f64 {
    u.iter().zip(v.iter()).zip(r.iter()).map(|((a, b), r)| r * (a * b)).sum()
}

/// `u^T R v` with a square, possibly asymmetric `R`.
pub fn distmult_score(u: ArrayView1<f64>, v: ArrayView1<f64>, r: &Array2<f64>) -> f64 {
    u.dot(&r.dot(&v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Decoder {
    Bilinear {
        #[serde(with = "crate::tensor_serde::vector")]
        r: Array1<f64>,
    },
    DistMult {
        #[serde(with = "crate::tensor_serde::mat")]
        r: Array2<f64>,
    },
    /// MLP on `concat(E_u, E_v)`.
    Mlp { mlp: Mlp },
}

pub enum DecoderCache {
    None,
    Mlp(super::mlp::MlpCache),
}

impl Decoder {
    pub fn bilinear<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Decoder::Bilinear {
            r: glorot_uniform(1, dim, dim, 1, rng).remove_axis(Axis(0)),
        }
    }

    pub fn distmult<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Decoder::DistMult {
            r: glorot_uniform(dim, dim, dim, dim, rng),
        }
    }

    /// One hidden layer of width `dim`.
    pub fn mlp<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Decoder::Mlp {
            mlp: Mlp::new(&[2 * dim, dim, 1], rng),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, Decoder::Bilinear { .. })
    }

    pub fn score(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match self {
            Decoder::Bilinear { r } => bilinear_score(u, v, r.view()),
            Decoder::DistMult { r } => distmult_score(u, v, r),
            Decoder::Mlp { mlp } => {
                let x: Vec<f64> = u.iter().chain(v.iter()).copied().collect();
                mlp.forward(&x).expect("decoder input width is 2D")
            }
        }
    }

    /// Scores for every `(src, dst)` pair of node indices.
    pub fn forward(&self, embed: &Array2<f64>, pairs: &[(usize, usize)]) -> (Array1<f64>, DecoderCache) {
        match self {
            Decoder::Mlp { mlp } => {
                let x = pair_inputs(embed, pairs);
                let (out, cache) = mlp.forward_batch(&x);
                (out, DecoderCache::Mlp(cache))
            }
            _ => (
                pairs.iter().map(|&(u, v)| self.score(embed.row(u), embed.row(v))).collect(),
                DecoderCache::None,
            ),
        }
    }

    /// Returns decoder gradients and `d loss / d embeddings`.
    pub fn backward(
        &self,
        embed: &Array2<f64>,
        pairs: &[(usize, usize)],
        cache: &DecoderCache,
        d_out: &Array1<f64>,
    ) -> (Decoder, Array2<f64>) {
        let mut d_embed = Array2::zeros(embed.raw_dim());
        let grads = match (self, cache) {
            (Decoder::Bilinear { r }, _) => {
                let mut d_r = Array1::zeros(r.len());
                for (&(u, v), &d) in pairs.iter().zip(d_out) {
                    let (eu, ev) = (embed.row(u), embed.row(v));
                    d_r.scaled_add(d, &(&eu * &ev));
                    let ru = r * &eu;
                    let rv = r * &ev;
                    d_embed.row_mut(u).scaled_add(d, &rv);
                    d_embed.row_mut(v).scaled_add(d, &ru);
                }
                Decoder::Bilinear { r: d_r }
            }
            (Decoder::DistMult { r }, _) => {
                let mut d_r = Array2::zeros(r.raw_dim());
                for (&(u, v), &d) in pairs.iter().zip(d_out) {
                    let (eu, ev) = (embed.row(u), embed.row(v));
                    let outer = eu.insert_axis(Axis(1)).dot(&ev.insert_axis(Axis(0)));
                    d_r.scaled_add(d, &outer);
                    d_embed.row_mut(u).scaled_add(d, &r.dot(&ev));
                    d_embed.row_mut(v).scaled_add(d, &r.t().dot(&eu));
                }
                Decoder::DistMult { r: d_r }
            }
            (Decoder::Mlp { mlp }, DecoderCache::Mlp(c)) => {
                let (g, d_x) = mlp.backward(c, d_out);
                let dim = embed.ncols();
                for (k, &(u, v)) in pairs.iter().enumerate() {
                    d_embed.row_mut(u).scaled_add(1.0, &d_x.slice(s![k, ..dim]));
                    d_embed.row_mut(v).scaled_add(1.0, &d_x.slice(s![k, dim..]));
                }
                Decoder::Mlp { mlp: g }
            }
            (Decoder::Mlp { .. }, DecoderCache::None) => panic!("MLP decoder backward needs its forward cache"),
        };
        (grads, d_embed)
    }
}

fn pair_inputs(embed: &Array2<f64>, pairs: &[(usize, usize)]) -> Array2<f64> {
    let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    concatenate(Axis(1), &[embed.select(Axis(0), &src).view(), embed.select(Axis(0), &dst).view()])
        .expect("same row count")
        .as_standard_layout()
        .into_owned()
}

impl Parameterized for Decoder {
    fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Decoder::Bilinear { r } => vec![slice1(r)],
            Decoder::DistMult { r } => vec![slice2(r)],
            Decoder::Mlp { mlp } => mlp.param_slices(),
        }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Decoder::Bilinear { r } => vec![slice1_mut(r)],
            Decoder::DistMult { r } => vec![slice2_mut(r)],
            Decoder::Mlp { mlp } => mlp.param_slices_mut(),
        }
    }
}
