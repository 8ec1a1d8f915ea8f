//! Training, persistence and prediction for every model kind.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelKind, RunConfig};
use crate::data::{haversine_distance, validate_attractions, Attraction, FeaturePipeline, GeoPoint, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::explain::TreeTerm;
use crate::forest::{fit_forest, pair_features_embed, pair_features_raw, Forest};
use crate::graph::{build_graph, InteractionGraph};
use crate::ingest::{FlowTable, Split};
use crate::metrics::{evaluate, EvalReport};
use crate::neural::model::deep_gravity_sizes;
use crate::neural::{
    train, Decoder, DeepGravityObjective, GraphModel, GraphObjective, History, Mlp, Propagation, TrainConfig,
};

pub const FORMAT_VERSION: u32 = 1;

/// Column names of the raw pair feature row.
pub fn raw_pair_feature_names() -> Vec<String> {
    let side = |suffix: &'static str| FEATURE_NAMES.iter().map(move |n| format!("{n}_{suffix}"));
    side("i").chain(side("j")).chain(["distance".to_owned()]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub features: FeaturePipeline,
    /// Pair distances in meters are scaled by the range seen on training pairs.
    pub distance_min: f64,
    pub distance_max: f64,
    pub threshold: u64,
    pub log_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrainedModel {
    Forest { forest: Forest },
    DeepGravity { network: Mlp },
    Graph { network: GraphModel, refinement: Option<Forest> },
}

/// Everything needed to reproduce predictions without the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub seed: u64,
    pub directed: bool,
    pub config: RunConfig,
    pub preprocessing: Preprocessing,
    pub attractions: Vec<Attraction>,
    pub edges: Vec<(String, String)>,
    pub model: TrainedModel,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let artifact: ModelArtifact = serde_json::from_str(text)?;
        if artifact.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "model file format {} is not supported (expected {FORMAT_VERSION})",
                artifact.format_version
            )));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn node_space(&self) -> Result<NodeSpace> {
        NodeSpace::new(
            &self.attractions,
            &self.preprocessing.features,
            (self.preprocessing.distance_min, self.preprocessing.distance_max),
        )
    }

    pub fn graph(&self, space: &NodeSpace) -> Result<InteractionGraph> {
        InteractionGraph::from_edges(
            space.ids.clone(),
            space.features.clone(),
            self.edges.iter().map(|(a, b)| (a.as_str(), b.as_str())),
            self.directed,
        )
    }
}

/// Node ids, scaled node features, coordinates and the distance scaling.
#[derive(Debug, Clone)]
pub struct NodeSpace {
    pub ids: Vec<String>,
    index: HashMap<String, usize>,
    pub features: Array2<f64>,
    pub pipeline: FeaturePipeline,
    locations: Vec<GeoPoint>,
    distance_range: (f64, f64),
}

impl NodeSpace {
    pub fn new(attractions: &[Attraction], pipeline: &FeaturePipeline, distance_range: (f64, f64)) -> Result<Self> {
        let ids: Vec<String> = attractions.iter().map(|a| a.id.clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self {
            index,
            features: pipeline.transform_all(attractions)?,
            pipeline: pipeline.clone(),
            locations: attractions.iter().map(Attraction::location).collect(),
            distance_range,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Dataset(format!("unknown attraction id {id:?}")))
    }

    pub fn location(&self, i: usize) -> GeoPoint {
        self.locations[i]
    }

    /// Great-circle distance in meters, identical for both orderings.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        haversine_distance(self.locations[a], self.locations[b])
    }

    pub fn scaled_distance(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = self.distance_range;
        if hi > lo {
            (self.distance(i, j) - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn raw_row(&self, i: usize, j: usize) -> Array1<f64> {
        pair_features_raw(self.features.row(i), self.features.row(j), self.scaled_distance(i, j))
            .expect("feature rows share one width")
    }

    pub fn embed_row(&self, embed: &Array2<f64>, i: usize, j: usize) -> Array1<f64> {
        pair_features_embed(embed.row(i), embed.row(j), self.scaled_distance(i, j))
    }
}

type Labeled = Vec<(usize, usize, f64)>;

fn labeled_pairs(flows: &FlowTable, space: &NodeSpace, split: Split) -> Result<Labeled> {
    flows
        .pairs_in(split)
        .map(|((a, b), c)| Ok((space.index(a)?, space.index(b)?, c as f64)))
        .collect()
}

fn zero_pairs(flows: &FlowTable, space: &NodeSpace) -> Labeled {
    let n = space.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || (!flows.is_directed() && j < i) {
                continue;
            }
            if flows.get(&space.ids[i], &space.ids[j]).is_none() {
                out.push((i, j, 0.0));
            }
        }
    }
    out
}

/// Stacks one row per pair, or two (both orderings) when `both` is set.
fn stack_rows(pairs: &Labeled, both: bool, row: impl Fn(usize, usize) -> Array1<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for &(i, j, t) in pairs {
        rows.push(row(i, j));
        y.push(t);
        if both {
            rows.push(row(j, i));
            y.push(t);
        }
    }
    let width = rows.first().map_or(0, Array1::len);
    let mut x = Array2::zeros((rows.len(), width));
    for (k, r) in rows.iter().enumerate() {
        x.row_mut(k).assign(r);
    }
    (x, y)
}

fn encode_target(y: f64, log: bool) -> f64 {
    if log {
        y.ln_1p()
    } else {
        y
    }
}

fn decode_target(y: f64, log: bool) -> f64 {
    if log {
        y.exp_m1()
    } else {
        y
    }
}

pub struct TrainOutput {
    pub artifact: ModelArtifact,
    /// Per-epoch losses of the neural part, if the model has one.
    pub history: Option<History>,
}

/// Fits `cfg.model` on the training split of `flows`; the validation split
/// drives early stopping. Validation and test counts never reach the
/// graph, the distance scaling or any training row.
pub fn train_model(
    cfg: &RunConfig,
    attractions: &[Attraction],
    flows: &FlowTable,
    edges_override: Option<Vec<(String, String)>>,
) -> Result<TrainOutput> {
    let kind = cfg.model;
    if kind.is_directed() != flows.is_directed() {
        return Err(Error::InvalidArgument(format!(
            "model {kind} needs a {} flow table",
            if kind.is_directed() { "directed" } else { "undirected" }
        )));
    }
    let space = fit_node_space(attractions, flows)?;
    let mut train_pairs = labeled_pairs(flows, &space, Split::Train)?;
    let val_pairs = labeled_pairs(flows, &space, Split::Val)?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Dataset(
            "training needs non-empty train and val splits; run ingest or synth first".into(),
        ));
    }
    if cfg.train_zero_pairs {
        train_pairs.extend(zero_pairs(flows, &space));
    }

    let graph = match edges_override {
        Some(edges) => InteractionGraph::from_edges(
            space.ids.clone(),
            space.features.clone(),
            edges.iter().map(|(a, b)| (a.as_str(), b.as_str())),
            flows.is_directed(),
        )?,
        None => build_graph(flows, space.ids.clone(), space.features.clone(), cfg.threshold)?,
    };
    let edges: Vec<(String, String)> = graph
        .edges()
        .into_iter()
        .map(|(a, b)| (space.ids[a].clone(), space.ids[b].clone()))
        .collect();

    let tcfg = cfg.training_config();
    let log = tcfg.log_target;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    log::info!(
        "training {kind}: {} train / {} val pairs, {} nodes, {} edges",
        train_pairs.len(),
        val_pairs.len(),
        space.len(),
        graph.edge_count()
    );

    let (model, history) = match kind {
        ModelKind::Rf => {
            let (x, y) = stack_rows(&train_pairs, true, |i, j| space.raw_row(i, j));
            let forest = fit_forest(&x, &y, &cfg.forest, rng.random())?;
            (TrainedModel::Forest { forest }, None)
        }
        ModelKind::DeepGravity => {
            let (tx, ty) = stack_rows(&train_pairs, true, |i, j| space.raw_row(i, j));
            let (vx, vy) = stack_rows(&val_pairs, true, |i, j| space.raw_row(i, j));
            let objective = DeepGravityObjective {
                train_x: tx,
                train_y: ty.iter().map(|&t| encode_target(t, log)).collect(),
                val_x: vx,
                val_y: vy.iter().map(|&t| encode_target(t, log)).collect(),
            };
            let sizes = deep_gravity_sizes(objective.train_x.ncols(), cfg.hidden_layers, cfg.hidden_width);
            let out = train(&objective, Mlp::new(&sizes, &mut rng), &tcfg)?;
            (TrainedModel::DeepGravity { network: out.best }, Some(out.history))
        }
        ModelKind::GcnRf | ModelKind::SiGcn | ModelKind::SiGcnRf | ModelKind::SiGcnRfNoEdge | ModelKind::DistmultDirected => {
            let propagation = if kind == ModelKind::SiGcnRfNoEdge {
                Propagation::NoEdges
            } else {
                Propagation::WithEdges
            };
            let init = GraphModel::new(
                space.features.ncols(),
                cfg.embed_dim,
                cfg.layers,
                propagation,
                |d, r: &mut ChaCha8Rng| match kind {
                    ModelKind::GcnRf => Decoder::mlp(d, r),
                    ModelKind::DistmultDirected => Decoder::distmult(d, r),
                    _ => Decoder::bilinear(d, r),
                },
                &mut rng,
            );
            let (network, history) = train_graph(&graph, &train_pairs, &val_pairs, init, &tcfg)?;
            let refinement = match kind {
                ModelKind::GcnRf | ModelKind::SiGcnRf | ModelKind::SiGcnRfNoEdge => {
                    let embed = network.embed(&graph)?;
                    let (x, y) = stack_rows(&train_pairs, true, |i, j| space.embed_row(&embed, i, j));
                    Some(fit_forest(&x, &y, &cfg.forest, rng.random())?)
                }
                _ => None,
            };
            (TrainedModel::Graph { network, refinement }, Some(history))
        }
    };

    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        model_kind: kind,
        seed: cfg.seed,
        directed: flows.is_directed(),
        config: cfg.clone(),
        preprocessing: Preprocessing {
            features: space.pipeline.clone(),
            distance_min: space.distance_range.0,
            distance_max: space.distance_range.1,
            threshold: cfg.threshold,
            log_target: log,
        },
        attractions: attractions.to_vec(),
        edges,
        model,
    };
    Ok(TrainOutput { artifact, history })
}

fn split_targets(pairs: &Labeled, log: bool) -> (Vec<(usize, usize)>, Array1<f64>) {
    (
        pairs.iter().map(|&(i, j, _)| (i, j)).collect(),
        pairs.iter().map(|&(_, _, t)| encode_target(t, log)).collect(),
    )
}

fn train_graph(
    graph: &InteractionGraph,
    train_pairs: &Labeled,
    val_pairs: &Labeled,
    init: GraphModel,
    cfg: &TrainConfig,
) -> Result<(GraphModel, History)> {
    let (tp, tt) = split_targets(train_pairs, cfg.log_target);
    let (vp, vt) = split_targets(val_pairs, cfg.log_target);
    let objective = GraphObjective {
        graph,
        train_pairs: tp,
        train_targets: tt,
        val_pairs: vp,
        val_targets: vt,
    };
    let out = train(&objective, init, cfg)?;
    Ok((out.best, out.history))
}

/// Validation `(mape, cpc)` of an encoder with a bilinear decoder trained
/// on `graph`; used by the threshold sweep.
pub(crate) fn score_graph_on_val(
    cfg: &RunConfig,
    space: &NodeSpace,
    flows: &FlowTable,
    graph: &InteractionGraph,
) -> Result<(f64, f64)> {
    let train_pairs = labeled_pairs(flows, space, Split::Train)?;
    let val_pairs = labeled_pairs(flows, space, Split::Val)?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Dataset("sweep needs non-empty train and val splits".into()));
    }
    let tcfg = cfg.training_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = GraphModel::new(
        space.features.ncols(),
        cfg.embed_dim,
        cfg.layers,
        Propagation::WithEdges,
        |d, r: &mut ChaCha8Rng| Decoder::bilinear(d, r),
        &mut rng,
    );
    let (model, _) = train_graph(graph, &train_pairs, &val_pairs, init, &tcfg)?;
    let pairs: Vec<(usize, usize)> = val_pairs.iter().map(|&(i, j, _)| (i, j)).collect();
    let pred: Vec<f64> = model
        .predict(graph, &pairs)?
        .iter()
        .map(|&p| decode_target(p, tcfg.log_target))
        .collect();
    let truth: Vec<f64> = val_pairs.iter().map(|&(_, _, t)| t).collect();
    let report = evaluate(&truth, &pred, 1)?;
    Ok((report.mape, report.cpc))
}

/// Fits feature preprocessing on the attractions and the distance scaling
/// on the training pairs; fails on flow ids without an attraction.
pub(crate) fn fit_node_space(attractions: &[Attraction], flows: &FlowTable) -> Result<NodeSpace> {
    validate_attractions(attractions)?;
    let pipeline = FeaturePipeline::fit(attractions)?;
    let mut space = NodeSpace::new(attractions, &pipeline, (0.0, 0.0))?;
    for ((a, b), _) in flows.iter() {
        space.index(a)?;
        space.index(b)?;
    }
    let train = labeled_pairs(flows, &space, Split::Train)?;
    let (lo, hi) = train.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(i, j, _)| {
        let d = space.distance(i, j);
        (lo.min(d), hi.max(d))
    });
    space.distance_range = (lo, hi);
    Ok(space)
}

/// A loaded artifact with its node space and embeddings precomputed.
pub struct Predictor<'a> {
    artifact: &'a ModelArtifact,
    space: NodeSpace,
    embeddings: Option<Array2<f64>>,
}

impl<'a> Predictor<'a> {
    pub fn new(artifact: &'a ModelArtifact) -> Result<Self> {
        let space = artifact.node_space()?;
        let embeddings = match &artifact.model {
            TrainedModel::Graph { network, .. } => Some(network.embed(&artifact.graph(&space)?)?),
            _ => None,
        };
        Ok(Self {
            artifact,
            space,
            embeddings,
        })
    }

    pub fn space(&self) -> &NodeSpace {
        &self.space
    }

    pub fn predict(&self, src: &str, dst: &str) -> Result<f64> {
        self.predict_index(self.space.index(src)?, self.space.index(dst)?)
    }

    /// Forest-based models average both orderings, so their undirected
    /// predictions are exactly symmetric.
    pub fn predict_index(&self, i: usize, j: usize) -> Result<f64> {
        let log = self.artifact.preprocessing.log_target;
        let sym = |f: &Forest, a: Array1<f64>, b: Array1<f64>| -> Result<f64> {
            Ok(0.5 * (f.predict(a.view())? + f.predict(b.view())?))
        };
        match &self.artifact.model {
            TrainedModel::Forest { forest } => sym(forest, self.space.raw_row(i, j), self.space.raw_row(j, i)),
            TrainedModel::DeepGravity { network } => {
                let x = self.space.raw_row(i, j);
                Ok(decode_target(network.forward(x.as_slice().expect("contiguous row"))?, log))
            }
            TrainedModel::Graph { network, refinement } => {
                let e = self.embeddings.as_ref().expect("graph models carry embeddings");
                match refinement {
                    Some(f) => sym(f, self.space.embed_row(e, i, j), self.space.embed_row(e, j, i)),
                    None => Ok(decode_target(network.decoder.score(e.row(i), e.row(j)), log)),
                }
            }
        }
    }

    /// The symmetrized raw-feature forest as an additive tree ensemble:
    /// every tree appears once as is and once reading the swapped row.
    pub fn raw_forest_terms(&self) -> Result<Vec<TreeTerm<'_>>> {
        let TrainedModel::Forest { forest } = &self.artifact.model else {
            return Err(Error::InvalidArgument(format!(
                "attribution needs an rf model, got {}",
                self.artifact.model_kind
            )));
        };
        let f = self.space.features.ncols();
        let identity: Vec<usize> = (0..forest.n_features).collect();
        let swapped: Vec<usize> = identity
            .iter()
            .map(|&k| if k < f { k + f } else if k < 2 * f { k - f } else { k })
            .collect();
        let weight = 0.5 / forest.trees.len() as f64;
        Ok(forest
            .trees
            .iter()
            .flat_map(|tree| {
                [identity.clone(), swapped.clone()].map(|feature_map| TreeTerm {
                    tree,
                    weight,
                    feature_map,
                })
            })
            .collect())
    }

    /// The symmetrized raw-feature forest as a function of one pair row,
    /// for attribution.
    pub fn raw_forest_fn(&self) -> Result<impl Fn(ArrayView1<f64>) -> f64 + Sync + '_> {
        let TrainedModel::Forest { forest } = &self.artifact.model else {
            return Err(Error::InvalidArgument(format!(
                "attribution needs an rf model, got {}",
                self.artifact.model_kind
            )));
        };
        let f = self.space.features.ncols();
        Ok(move |x: ArrayView1<f64>| {
            let mut swapped = x.to_owned();
            for k in 0..f {
                swapped[k] = x[f + k];
                swapped[f + k] = x[k];
            }
            0.5 * (forest.predict(x).expect("row width checked") + forest.predict(swapped.view()).expect("row width checked"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairPrediction {
    pub src: String,
    pub dst: String,
    pub truth: f64,
    pub pred: f64,
}

/// Predictions and metrics on one split of `flows`.
pub fn evaluate_artifact(
    artifact: &ModelArtifact,
    flows: &FlowTable,
    split: Split,
    n_bins: usize,
) -> Result<(EvalReport, Vec<PairPrediction>)> {
    let predictor = Predictor::new(artifact)?;
    let rows: Vec<PairPrediction> = flows
        .pairs_in(split)
        .map(|((a, b), c)| {
            Ok(PairPrediction {
                src: a.clone(),
                dst: b.clone(),
                truth: c as f64,
                pred: predictor.predict(a, b)?,
            })
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::Dataset(format!("split {} has no pairs", split.as_str())));
    }
    let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    let pred: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    Ok((evaluate(&truth, &pred, n_bins)?, rows))
}

/// Metrics of predicting the mean training count for every pair.
pub fn mean_baseline(flows: &FlowTable, split: Split, n_bins: usize) -> Result<EvalReport> {
    let train: Vec<f64> = flows.pairs_in(Split::Train).map(|(_, c)| c as f64).collect();
    if train.is_empty() {
        return Err(Error::Dataset("no training pairs".into()));
    }
    let mean = train.iter().sum::<f64>() / train.len() as f64;
    let truth: Vec<f64> = flows.pairs_in(split).map(|(_, c)| c as f64).collect();
    evaluate(&truth, &vec![mean; truth.len()], n_bins)
}
