//! Orchestration: run configuration, the model zoo, persisted artifacts,
//! reports and the command implementations behind the CLI.

mod commands;
mod config;
mod flowmap;
mod zoo;

pub use commands::{
    cmd_evaluate, cmd_explain, cmd_export_flowmap, cmd_ingest, cmd_predict, cmd_sweep_threshold, cmd_synth,
    cmd_train, load_flows, Report,
};
pub use config::{ModelKind, RunConfig, ShapModeSetting};
pub use flowmap::{flowmap_geojson, quantile_classes, FlowLine};
pub use zoo::{
    evaluate_artifact, mean_baseline, raw_pair_feature_names, train_model, ModelArtifact, NodeSpace, PairPrediction,
    Predictor, Preprocessing, TrainOutput, TrainedModel, FORMAT_VERSION,
};
