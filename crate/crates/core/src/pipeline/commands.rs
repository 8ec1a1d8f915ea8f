use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, ShapModeSetting};
use super::flowmap::{flowmap_geojson, FlowLine};
use super::zoo::{
    evaluate_artifact, fit_node_space, raw_pair_feature_names, score_graph_on_val, train_model, ModelArtifact,
    Predictor, TrainOutput,
};
use super::ModelKind;
use crate::data::{read_attractions, write_attractions, Attraction};
use crate::error::{Error, Result};
use crate::explain::{aggregate_shap, explain_rows, explain_tree_rows, write_shap_points, write_shap_summary, BackgroundSet, ShapMode, ShapSummary};
use crate::graph::{best_threshold, read_edges_csv, sweep_threshold, write_sweep_csv, SweepRow};
use crate::ingest::{
    apply_splits_csv, extract_directed_itf, extract_itf, filter_trips, flow_stats, merge_notes, read_itf_csv,
    read_notes_jsonl, split_dataset, synth_generate, synth_trips, trip_length_stats, write_itf_csv,
    write_notes_jsonl, write_splits_csv, AttractionMatcher, FlowTable, IngestStats, NoteRecord, Split,
};
use crate::metrics::EvalReport;

/// Largest share of malformed note lines ingest tolerates.
const MAX_BAD_FRACTION: f64 = 0.1;

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub split: String,
    #[serde(flatten)]
    pub metrics: EvalReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_table(out: &Path, stem: &str, table: &FlowTable) -> Result<()> {
    write_itf_csv(&out.join(format!("itf{stem}.csv")), table)?;
    write_splits_csv(&out.join(format!("splits{stem}.csv")), table)
}

/// Reads attractions, the flow table and its split labels.
pub fn load_flows(cfg: &RunConfig) -> Result<(Vec<Attraction>, FlowTable)> {
    let attractions = read_attractions(&cfg.attractions_path())?;
    let mut flows = read_itf_csv(&cfg.itf_path(), cfg.directed)?;
    flows.extend_universe(attractions.iter().map(|a| a.id.clone()));
    let splits = cfg.splits_path();
    if !splits.exists() {
        return Err(Error::Dataset(format!("split file {} not found", splits.display())));
    }
    apply_splits_csv(&splits, &mut flows)?;
    Ok((attractions, flows))
}

/// Flow table for an existing artifact: explicit data locations win,
/// otherwise the ones recorded at training time.
fn artifact_flows(cfg: &RunConfig, artifact: &ModelArtifact) -> Result<FlowTable> {
    let mut source = if cfg.data_unset() { artifact.config.clone() } else { cfg.clone() };
    source.directed = artifact.directed;
    let mut flows = read_itf_csv(&source.itf_path(), source.directed)?;
    apply_splits_csv(&source.splits_path(), &mut flows)?;
    Ok(flows)
}

/// Gravity-law attractions and flows plus gravity-walk travel notes.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    let (attractions, mut flows) = synth_generate(cfg.synth_n, cfg.seed, &cfg.synth)?;
    split_dataset(&mut flows, cfg.split_ratios, cfg.seed)?;
    write_attractions(&cfg.out.join("attractions.csv"), &attractions)?;
    write_table(&cfg.out, "", &flows)?;

    let trips = synth_trips(&attractions, cfg.synth_trips, 8, cfg.seed);
    let notes: Vec<NoteRecord> = trips
        .iter()
        .map(|t| NoteRecord {
            tourist_id: t.tourist_id.clone(),
            posted_date: t.date.format("%Y-%m-%d").to_string(),
            mentions: t
                .attractions
                .iter()
                .map(|id| attractions.iter().find(|a| &a.id == id).map_or(id.clone(), |a| a.name.clone()))
                .collect(),
        })
        .collect();
    write_notes_jsonl(&cfg.out.join("trips.jsonl"), &notes)?;
    let mut directed = extract_directed_itf(&trips);
    directed.extend_universe(attractions.iter().map(|a| a.id.clone()));
    split_dataset(&mut directed, cfg.split_ratios, cfg.seed)?;
    write_table(&cfg.out, "_directed", &directed)?;
    log::info!("wrote {} attractions and {} flow pairs to {}", attractions.len(), flows.len(), cfg.out.display());
    Ok(())
}

/// Travel notes to split flow tables.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestStats> {
    let attractions = read_attractions(&cfg.attractions_path())?;
    let notes_path = cfg.notes_path();
    let (notes, bad) = read_notes_jsonl(&notes_path)?;
    for (line, message) in &bad {
        log::warn!("{}:{line}: {message}", notes_path.display());
    }
    let total = notes.len() + bad.len();
    if total > 0 && bad.len() as f64 > MAX_BAD_FRACTION * total as f64 {
        let lines: Vec<String> = bad.iter().take(10).map(|(l, _)| l.to_string()).collect();
        return Err(Error::Dataset(format!(
            "{} of {total} lines in {} are malformed (first at lines {})",
            bad.len(),
            notes_path.display(),
            lines.join(", ")
        )));
    }

    let matcher = AttractionMatcher::new(&attractions)?;
    let matched: Vec<NoteRecord> = notes
        .iter()
        .map(|n| NoteRecord {
            mentions: matcher.match_mentions(&n.mentions),
            ..n.clone()
        })
        .collect();
    let merged = merge_notes(&matched, cfg.merge_window)?;
    let trips = filter_trips(merged.trips);

    fs::create_dir_all(&cfg.out)?;
    let ids = || attractions.iter().map(|a| a.id.clone());
    let mut flows = extract_itf(&trips);
    flows.extend_universe(ids());
    split_dataset(&mut flows, cfg.split_ratios, cfg.seed)?;
    write_table(&cfg.out, "", &flows)?;
    if cfg.directed {
        let mut directed = extract_directed_itf(&trips);
        directed.extend_universe(ids());
        split_dataset(&mut directed, cfg.split_ratios, cfg.seed)?;
        write_table(&cfg.out, "_directed", &directed)?;
    }
    write_attractions(&cfg.out.join("attractions.csv"), &attractions)?;

    let (mean_len, median_len) = trip_length_stats(&trips);
    let (itf_mean, itf_std) = flow_stats(&flows);
    let stats = IngestStats {
        n_attractions: attractions.len(),
        n_notes: notes.len(),
        n_skipped_notes: bad.len() + merged.skipped,
        n_trips: trips.len(),
        mean_attractions_per_trip: mean_len,
        median_attractions_per_trip: median_len,
        n_pairs: flows.len(),
        itf_mean,
        itf_std,
    };
    write_json(&cfg.out.join("ingest_stats.json"), &stats)?;
    Ok(stats)
}

/// Trains `cfg.model` and writes `model.json` (and `history.json` for
/// neural models) into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let mut cfg = cfg.clone();
    cfg.directed |= cfg.model.is_directed();
    let (attractions, flows) = load_flows(&cfg)?;
    let edges = cfg.edges.as_deref().map(read_edges_csv).transpose()?;
    let out = train_model(&cfg, &attractions, &flows, edges)?;
    fs::create_dir_all(&cfg.out)?;
    out.artifact.save(&cfg.out.join("model.json"))?;
    if let Some(h) = &out.history {
        write_json(&cfg.out.join("history.json"), h)?;
    }
    Ok(out)
}

/// Writes `report.json` and `predictions.csv` for `cfg.split`.
pub fn cmd_evaluate(cfg: &RunConfig, model_path: &Path) -> Result<Report> {
    let artifact = ModelArtifact::load(model_path)?;
    let flows = artifact_flows(cfg, &artifact)?;
    let (metrics, rows) = evaluate_artifact(&artifact, &flows, cfg.split, cfg.range_bins)?;
    let report = Report {
        model: artifact.model_kind.to_string(),
        split: cfg.split.as_str().to_owned(),
        metrics,
    };
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    let mut w = csv::Writer::from_path(cfg.out.join("predictions.csv"))?;
    w.write_record(["src_id", "dst_id", "true", "pred"])?;
    for r in &rows {
        w.serialize((&r.src, &r.dst, r.truth, r.pred))?;
    }
    w.flush()?;
    Ok(report)
}

/// Shapley attributions of an `rf` model over pairs of `cfg.split`.
pub fn cmd_explain(cfg: &RunConfig, model_path: &Path) -> Result<ShapSummary> {
    let artifact = ModelArtifact::load(model_path)?;
    if artifact.model_kind != ModelKind::Rf {
        return Err(Error::InvalidArgument(format!(
            "explain works on rf models, got {}",
            artifact.model_kind
        )));
    }
    let flows = artifact_flows(cfg, &artifact)?;
    let predictor = Predictor::new(&artifact)?;
    let space = predictor.space();
    let model = predictor.raw_forest_fn()?;

    let rows_for = |split: Split, limit: usize| -> Result<(Vec<String>, ndarray::Array2<f64>)> {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for ((a, b), _) in flows.pairs_in(split).take(limit) {
            let (i, j) = (space.index(a)?, space.index(b)?);
            ids.push(format!("{a}|{b}"));
            rows.extend(space.raw_row(i, j));
        }
        let width = raw_pair_feature_names().len();
        let m = ndarray::Array2::from_shape_vec((ids.len(), width), rows).map_err(|e| Error::Shape(e.to_string()))?;
        Ok((ids, m))
    };
    let (_, train_rows) = rows_for(Split::Train, usize::MAX)?;
    let background = BackgroundSet::subsample(&train_rows, cfg.background, cfg.seed)?;
    let (ids, instances) = rows_for(cfg.split, cfg.explain_instances)?;
    if ids.is_empty() {
        return Err(Error::Dataset(format!("split {} has no pairs", cfg.split.as_str())));
    }
    let results = match cfg.shap_mode {
        ShapModeSetting::Exact | ShapModeSetting::Auto => {
            explain_tree_rows(&predictor.raw_forest_terms()?, &instances, &ids, &background)?
        }
        ShapModeSetting::Sample => {
            let mode = ShapMode::Sample {
                n_permutations: cfg.permutations,
            };
            explain_rows(&model, &instances, &ids, &background, mode, cfg.seed)?
        }
    };
    let summary = aggregate_shap(&results, &raw_pair_feature_names(), cfg.pool)?;
    fs::create_dir_all(&cfg.out)?;
    write_shap_summary(&cfg.out.join("shap_summary.csv"), &summary)?;
    write_shap_points(&cfg.out.join("shap_points.csv"), &summary)?;
    Ok(summary)
}

/// Validation MAPE and CPC of the bilinear encoder-decoder for each
/// threshold in `cfg.thresholds`; writes `threshold_sweep.csv`.
pub fn cmd_sweep_threshold(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let (attractions, flows) = load_flows(cfg)?;
    let space = fit_node_space(&attractions, &flows)?;
    let rows = sweep_threshold(&flows, &space.ids, &space.features, &cfg.thresholds, |g| {
        score_graph_on_val(cfg, &space, &flows, g)
    })?;
    fs::create_dir_all(&cfg.out)?;
    write_sweep_csv(&cfg.out.join("threshold_sweep.csv"), &rows)?;
    if let Some(best) = best_threshold(&rows) {
        log::info!("lowest validation MAPE at threshold {best}");
    }
    Ok(rows)
}

/// Predicted flows of `cfg.split` as `flows.geojson`.
pub fn cmd_export_flowmap(cfg: &RunConfig, model_path: &Path) -> Result<serde_json::Value> {
    let artifact = ModelArtifact::load(model_path)?;
    let flows = artifact_flows(cfg, &artifact)?;
    let (_, rows) = evaluate_artifact(&artifact, &flows, cfg.split, 1)?;
    let lines: Vec<FlowLine> = rows
        .into_iter()
        .map(|r| FlowLine {
            src: r.src,
            dst: r.dst,
            truth: Some(r.truth),
            pred: r.pred,
        })
        .collect();
    let locate = |id: &str| artifact.attractions.iter().find(|a| a.id == id).map(Attraction::location);
    let fc = flowmap_geojson(&lines, locate);
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("flows.geojson"), &fc)?;
    Ok(fc)
}

/// Prediction for the pair `cfg.src`, `cfg.dst`.
pub fn cmd_predict(cfg: &RunConfig, model_path: &Path) -> Result<f64> {
    let artifact = ModelArtifact::load(model_path)?;
    if cfg.directed && !artifact.directed {
        return Err(Error::InvalidArgument(format!(
            "{} is an undirected {} model; train distmult-directed for directed predictions",
            model_path.display(),
            artifact.model_kind
        )));
    }
    let (Some(src), Some(dst)) = (&cfg.src, &cfg.dst) else {
        return Err(Error::InvalidArgument("predict needs --src and --dst".into()));
    };
    Predictor::new(&artifact)?.predict(src, dst)
}
