use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decoder::Decoder;
use super::encoder::{EncoderParams, Propagation};
use super::mlp::Mlp;
use super::train::Objective;
use super::Parameterized;
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

/// Graph encoder followed by a pair decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphModel {
    pub encoder: EncoderParams,
    pub decoder: Decoder,
    pub propagation: Propagation,
}

impl GraphModel {
    pub fn new<R: Rng>(
        n_features: usize,
        dim: usize,
        layers: usize,
        propagation: Propagation,
        make_decoder: impl FnOnce(usize, &mut R) -> Decoder,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::new(n_features, dim, layers, rng);
        let decoder = make_decoder(dim, rng);
        Self {
            encoder,
            decoder,
            propagation,
        }
    }

    pub fn embed(&self, graph: &InteractionGraph) -> Result<Array2<f64>> {
        self.encoder.encode(graph, self.propagation)
    }

    pub fn predict(&self, graph: &InteractionGraph, pairs: &[(usize, usize)]) -> Result<Array1<f64>> {
        let e = self.embed(graph)?;
        Ok(self.decoder.forward(&e, pairs).0)
    }

    /// MSE over `pairs` and its exact gradient.
    pub fn loss_and_grad(
        &self,
        graph: &InteractionGraph,
        pairs: &[(usize, usize)],
        targets: &Array1<f64>,
    ) -> Result<(f64, GraphModel)> {
        check_targets(pairs.len(), targets)?;
        let cache = self.encoder.forward(graph, self.propagation)?;
        let embed = cache.embeddings();
        let (pred, dcache) = self.decoder.forward(embed, pairs);
        let resid = &pred - targets;
        let n = pairs.len() as f64;
        let loss = resid.mapv(|r| r * r).sum() / n;
        let d_pred = resid * (2.0 / n);
        let (decoder, d_embed) = self.decoder.backward(embed, pairs, &dcache, &d_pred);
        let encoder = self.encoder.backward(graph, self.propagation, &cache, &d_embed);
        Ok((
            loss,
            GraphModel {
                encoder,
                decoder,
                propagation: self.propagation,
            },
        ))
    }
}

fn check_targets(n_pairs: usize, targets: &Array1<f64>) -> Result<()> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("no pairs to train on".into()));
    }
    if n_pairs != targets.len() {
        return Err(Error::Shape(format!("{n_pairs} pairs but {} targets", targets.len())));
    }
    Ok(())
}

impl Parameterized for GraphModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.param_slices();
        out.extend(self.decoder.param_slices());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.param_slices_mut();
        out.extend(self.decoder.param_slices_mut());
        out
    }
}

/// MSE link regression on a fixed graph.
pub struct GraphObjective<'a> {
    pub graph: &'a InteractionGraph,
    pub train_pairs: Vec<(usize, usize)>,
    pub train_targets: Array1<f64>,
    pub val_pairs: Vec<(usize, usize)>,
    pub val_targets: Array1<f64>,
}

impl Objective for GraphObjective<'_> {
    type Params = GraphModel;

    fn loss_and_grad(&self, params: &GraphModel) -> Result<(f64, GraphModel)> {
        params.loss_and_grad(self.graph, &self.train_pairs, &self.train_targets)
    }

    fn val_loss(&self, params: &GraphModel) -> Result<f64> {
        check_targets(self.val_pairs.len(), &self.val_targets)?;
        let pred = params.predict(self.graph, &self.val_pairs)?;
        Ok((&pred - &self.val_targets).mapv(|r| r * r).mean().unwrap_or(0.0))
    }
}

/// Feed-forward regression on pair feature rows.
pub struct DeepGravityObjective {
    pub train_x: Array2<f64>,
    pub train_y: Array1<f64>,
    pub val_x: Array2<f64>,
    pub val_y: Array1<f64>,
}

/// Layer sizes of a deep-gravity network.
pub fn deep_gravity_sizes(input: usize, hidden_layers: usize, width: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(width, hidden_layers));
    sizes.push(1);
    sizes
}

impl Objective for DeepGravityObjective {
    type Params = Mlp;

    fn loss_and_grad(&self, mlp: &Mlp) -> Result<(f64, Mlp)> {
        check_targets(self.train_x.nrows(), &self.train_y)?;
        let (pred, cache) = mlp.forward_batch(&self.train_x);
        let resid = &pred - &self.train_y;
        let n = resid.len() as f64;
        let loss = resid.mapv(|r| r * r).sum() / n;
        let (grads, _) = mlp.backward(&cache, &(resid * (2.0 / n)));
        Ok((loss, grads))
    }

    fn val_loss(&self, mlp: &Mlp) -> Result<f64> {
        check_targets(self.val_x.nrows(), &self.val_y)?;
        let pred = mlp.forward_batch(&self.val_x).0;
        Ok((&pred - &self.val_y).mapv(|r| r * r).mean().unwrap_or(0.0))
    }
}
