//! Graph convolution encoder.
//!
//! `h0 = X P`, then for each layer
//! `h_v' = relu(W_l * mean_{u in N(v)} h_u + B_l * h_v)`. In row-major batch
//! form with `M = mean-aggregate(H)` this is `relu(M W^T + H B^T)`.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, relu, slice2, slice2_mut, Parameterized};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    WithEdges,
    /// Every message term is zero; only the self-update runs.
    NoEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Input projection, `F x D`.
    #[serde(with = "crate::tensor_serde::mat")]
    pub projection: Array2<f64>,
    /// Neighbor weights `W_l`, each `D x D`.
    #[serde(with = "crate::tensor_serde::mats")]
    pub neighbor_weights: Vec<Array2<f64>>,
    /// Self weights `B_l`, each `D x D`.
    #[serde(with = "crate::tensor_serde::mats")]
    pub self_weights: Vec<Array2<f64>>,
}

pub struct EncoderCache {
    /// `h0 ..= hL`
    pub hidden: Vec<Array2<f64>>,
    messages: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl EncoderCache {
    pub fn embeddings(&self) -> &Array2<f64> {
        self.hidden.last().expect("h0 is always present")
    }
}

impl EncoderParams {
    pub fn new<R: Rng>(n_features: usize, dim: usize, layers: usize, rng: &mut R) -> Self {
        let projection = glorot_uniform(n_features, dim, n_features, dim, rng);
        let mut neighbor_weights = Vec::with_capacity(layers);
        let mut self_weights = Vec::with_capacity(layers);
        for _ in 0..layers {
            neighbor_weights.push(glorot_uniform(dim, dim, dim, dim, rng));
            self_weights.push(glorot_uniform(dim, dim, dim, dim, rng));
        }
        Self {
            projection,
            neighbor_weights,
            self_weights,
        }
    }

    pub fn layers(&self) -> usize {
        self.neighbor_weights.len()
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    fn check(&self, graph: &InteractionGraph) -> Result<()> {
        if graph.features().ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "encoder expects {} input features, graph has {}",
                self.input_dim(),
                graph.features().ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, graph: &InteractionGraph, mode: Propagation) -> Result<EncoderCache> {
        self.check(graph)?;
        let h0 = graph.features().dot(&self.projection);
        let mut cache = EncoderCache {
            hidden: vec![h0],
            messages: Vec::with_capacity(self.layers()),
            pre: Vec::with_capacity(self.layers()),
        };
        for (w, b) in self.neighbor_weights.iter().zip(&self.self_weights) {
            let h = cache.hidden.last().expect("non-empty");
            let m = aggregate(graph, h, mode);
            let z = m.dot(&w.t()) + h.dot(&b.t());
            cache.hidden.push(z.mapv(relu));
            cache.messages.push(m);
            cache.pre.push(z);
        }
        Ok(cache)
    }

    /// Final-layer node embeddings.
    pub fn encode(&self, graph: &InteractionGraph, mode: Propagation) -> Result<Array2<f64>> {
        let mut cache = self.forward(graph, mode)?;
        Ok(cache.hidden.pop().expect("non-empty"))
    }

    /// Parameter gradients given `d loss / d embeddings`.
    pub fn backward(
        &self,
        graph: &InteractionGraph,
        mode: Propagation,
        cache: &EncoderCache,
        d_embed: &Array2<f64>,
    ) -> EncoderParams {
        let mut grads = self.zeros_like();
        let mut d_h = d_embed.clone();
        for l in (0..self.layers()).rev() {
            let mut d_z = d_h;
            d_z.zip_mut_with(&cache.pre[l], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            grads.neighbor_weights[l] = d_z.t().dot(&cache.messages[l]).as_standard_layout().into_owned();
            grads.self_weights[l] = d_z.t().dot(&cache.hidden[l]).as_standard_layout().into_owned();
            d_h = d_z.dot(&self.self_weights[l]);
            if mode == Propagation::WithEdges {
                let d_m = d_z.dot(&self.neighbor_weights[l]);
                aggregate_transpose_into(graph, &d_m, &mut d_h);
            }
        }
        grads.projection = graph.features().t().dot(&d_h).as_standard_layout().into_owned();
        grads
    }
}

/// Row `v` is the mean of the rows of `N(v)`; isolated nodes get zeros.
pub fn aggregate(graph: &InteractionGraph, h: &Array2<f64>, mode: Propagation) -> Array2<f64> {
    let mut m = Array2::zeros(h.raw_dim());
    if mode == Propagation::NoEdges {
        return m;
    }
    for (v, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
        let ns = graph.neighbors(v);
        if ns.is_empty() {
            continue;
        }
        for &u in ns {
            row += &h.row(u);
        }
        row /= ns.len() as f64;
    }
    m
}

fn aggregate_transpose_into(graph: &InteractionGraph, d_m: &Array2<f64>, out: &mut Array2<f64>) {
    for v in 0..graph.len() {
        let ns = graph.neighbors(v);
        if ns.is_empty() {
            continue;
        }
        let scale = 1.0 / ns.len() as f64;
        for &u in ns {
            out.row_mut(u).scaled_add(scale, &d_m.row(v));
        }
    }
}

impl Parameterized for EncoderParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = vec![slice2(&self.projection)];
        for (w, b) in self.neighbor_weights.iter().zip(&self.self_weights) {
            out.push(slice2(w));
            out.push(slice2(b));
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![slice2_mut(&mut self.projection)];
        for (w, b) in self.neighbor_weights.iter_mut().zip(self.self_weights.iter_mut()) {
            out.push(slice2_mut(w));
            out.push(slice2_mut(b));
        }
        out
    }
}
