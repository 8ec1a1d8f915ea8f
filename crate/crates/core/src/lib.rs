//! Tourism flow prediction between attractions.
//!
//! Attraction features and a thresholded interaction graph feed a graph
//! convolution encoder with a bilinear pair decoder; node embeddings plus
//! pair distance are then refined by a regression forest. Baselines,
//! metrics, Shapley attributions and the orchestration used by the
//! `flowgraph` CLI live here as well.

pub mod data;
pub mod error;
pub mod explain;
pub mod forest;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod neural;
pub mod pipeline;
mod tensor_serde;

pub use error::{Error, Result};
