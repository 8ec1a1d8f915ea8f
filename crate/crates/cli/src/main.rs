use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use flowgraph_core::pipeline::{self, RunConfig};

/// Tourism flow prediction between attractions.
#[derive(Parser, Debug)]
#[command(name = "flowgraph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build split flow tables from travel notes.
    Ingest,
    /// Generate a synthetic gravity-law dataset.
    Synth,
    /// Train the model kind given by --model.
    Train,
    /// Score a trained model (--model PATH) and write report.json.
    Evaluate,
    /// Shapley attributions of a trained rf model (--model PATH).
    Explain,
    /// Validation scores of the encoder-decoder over graph thresholds.
    SweepThreshold,
    /// Predicted flows as a GeoJSON flow map (--model PATH).
    ExportFlowmap,
    /// Predict the flow between --src and --dst (--model PATH).
    Predict,
}

#[derive(Args, Debug, Default)]
struct Options {
    /// key=value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (falls back to FLOWGRAPH_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model kind for `train`, model file for the other commands.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    threshold: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    clip_norm: Option<f64>,
    #[arg(long, global = true)]
    embed_dim: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    trees: Option<usize>,
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory with attractions.csv, itf.csv and splits.csv.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    attractions: Option<PathBuf>,
    #[arg(long, global = true)]
    itf: Option<PathBuf>,
    #[arg(long, global = true)]
    splits: Option<PathBuf>,
    /// Travel notes (trips.jsonl) for `ingest`.
    #[arg(long, global = true)]
    notes: Option<PathBuf>,
    /// Explicit graph edges (src_id,dst_id) instead of thresholding.
    #[arg(long, global = true)]
    edges: Option<PathBuf>,
    /// Split to evaluate, explain or export: train, val or test.
    #[arg(long, global = true)]
    split: Option<String>,
    /// Comma-separated thresholds for `sweep-threshold`.
    #[arg(long, global = true)]
    thresholds: Option<String>,
    /// exact, sample or auto.
    #[arg(long, global = true)]
    shap_mode: Option<String>,
    #[arg(long, global = true)]
    src: Option<String>,
    #[arg(long, global = true)]
    dst: Option<String>,
    /// Work on directed (ordered) flows.
    #[arg(long, global = true)]
    directed: bool,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Options {
    fn overrides(&self, command: &Command) -> anyhow::Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            out.push((k.to_owned(), v.to_owned()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_owned(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("seed", self.seed.map(|v| v.to_string()));
        if matches!(command, Command::Train) {
            push("model", self.model.clone());
        }
        push("threshold", self.threshold.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("patience", self.patience.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("clip-norm", self.clip_norm.map(|v| v.to_string()));
        push("embed-dim", self.embed_dim.map(|v| v.to_string()));
        push("layers", self.layers.map(|v| v.to_string()));
        push("trees", self.trees.map(|v| v.to_string()));
        push("max-depth", self.max_depth.map(|v| v.to_string()));
        push("out", path(&self.out));
        push("data", path(&self.data));
        push("attractions", path(&self.attractions));
        push("itf", path(&self.itf));
        push("splits", path(&self.splits));
        push("notes", path(&self.notes));
        push("edges", path(&self.edges));
        push("split", self.split.clone());
        push("thresholds", self.thresholds.clone());
        push("shap-mode", self.shap_mode.clone());
        push("src", self.src.clone());
        push("dst", self.dst.clone());
        if self.directed {
            push("directed", Some("true".into()));
        }
        Ok(out)
    }

    fn model_path(&self) -> anyhow::Result<PathBuf> {
        match &self.model {
            Some(m) => Ok(PathBuf::from(m)),
            None => bail!("this command needs --model PATH (a model.json written by `flowgraph train`)"),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let env_seed = std::env::var("FLOWGRAPH_SEED").ok();
    let overrides = cli.opts.overrides(&cli.command)?;
    let cfg = RunConfig::load(cli.opts.config.as_deref(), env_seed.as_deref(), &overrides)?;
    match cli.command {
        Command::Ingest => {
            let stats = pipeline::cmd_ingest(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Synth => {
            pipeline::cmd_synth(&cfg)?;
            println!("wrote synthetic dataset to {}", cfg.out.display());
        }
        Command::Train => {
            let out = pipeline::cmd_train(&cfg)?;
            let epochs = out.history.as_ref().map(|h| h.epochs.len());
            match epochs {
                Some(n) => println!("trained {} for {n} epochs; model in {}", cfg.model, cfg.out.display()),
                None => println!("trained {}; model in {}", cfg.model, cfg.out.display()),
            }
        }
        Command::Evaluate => {
            let report = pipeline::cmd_evaluate(&cfg, &cli.opts.model_path()?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Explain => {
            let summary = pipeline::cmd_explain(&cfg, &cli.opts.model_path()?)?;
            println!("feature,max_abs_phi,mean_abs_phi");
            for f in &summary.features {
                println!("{},{},{}", f.feature, f.max_abs_phi, f.mean_abs_phi);
            }
        }
        Command::SweepThreshold => {
            let rows = pipeline::cmd_sweep_threshold(&cfg)?;
            println!("threshold,val_mape,val_cpc,n_edges");
            let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            for r in &rows {
                println!("{},{},{},{}", r.threshold, fmt(r.val_mape), fmt(r.val_cpc), r.n_edges);
            }
        }
        Command::ExportFlowmap => {
            let fc = pipeline::cmd_export_flowmap(&cfg, &cli.opts.model_path()?)?;
            let n = fc["features"].as_array().map_or(0, Vec::len);
            println!("wrote {n} flows to {}", cfg.out.join("flows.geojson").display());
        }
        Command::Predict => {
            let p = pipeline::cmd_predict(&cfg, &cli.opts.model_path()?)?;
            println!("{p}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
