use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestConfig, MaxFeatures};
use crate::graph::DEFAULT_THRESHOLD;
use crate::ingest::{Split, SynthParams, DEFAULT_MERGE_WINDOW_DAYS, DEFAULT_SPLIT_RATIOS};
use crate::metrics::DEFAULT_RANGE_BINS;
use crate::neural::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Rf,
    DeepGravity,
    GcnRf,
    SiGcn,
    SiGcnRf,
    SiGcnRfNoEdge,
    /// Directed flows with a DistMult decoder and no refinement forest.
    DistmultDirected,
}

impl ModelKind {
    /// The undirected model zoo, in comparison-table order.
    pub const UNDIRECTED: [ModelKind; 6] = [
        ModelKind::Rf,
        ModelKind::DeepGravity,
        ModelKind::GcnRf,
        ModelKind::SiGcn,
        ModelKind::SiGcnRf,
        ModelKind::SiGcnRfNoEdge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::DeepGravity => "deep-gravity",
            ModelKind::GcnRf => "gcn-rf",
            ModelKind::SiGcn => "si-gcn",
            ModelKind::SiGcnRf => "si-gcn-rf",
            ModelKind::SiGcnRfNoEdge => "si-gcn-rf-no-edge",
            ModelKind::DistmultDirected => "distmult-directed",
        }
    }

    pub fn is_directed(self) -> bool {
        self == ModelKind::DistmultDirected
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = ModelKind::UNDIRECTED.into_iter().chain([ModelKind::DistmultDirected]);
        for k in all {
            if k.as_str() == s.trim() {
                return Ok(k);
            }
        }
        Err(Error::InvalidArgument(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapModeSetting {
    Exact,
    Sample,
    Auto,
}

impl FromStr for ShapModeSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(Self::Exact),
            "sample" => Ok(Self::Sample),
            "auto" => Ok(Self::Auto),
            other => Err(Error::InvalidArgument(format!("unknown SHAP mode {other:?}"))),
        }
    }
}

/// Every setting of a run. Built from defaults, then `FLOWGRAPH_SEED`,
/// then a `key=value` config file, then command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub threshold: u64,
    pub embed_dim: usize,
    pub layers: usize,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Add never co-visited pairs to the training rows with target 0.
    pub train_zero_pairs: bool,
    pub directed: bool,

    /// Directory holding attractions.csv, itf.csv and splits.csv.
    pub data: Option<PathBuf>,
    pub attractions: Option<PathBuf>,
    pub itf: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub notes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub out: PathBuf,

    pub split: Split,
    pub split_ratios: (f64, f64, f64),
    pub merge_window: i64,
    pub range_bins: usize,

    pub thresholds: Vec<u64>,

    pub shap_mode: ShapModeSetting,
    pub background: usize,
    pub permutations: usize,
    pub explain_instances: usize,
    pub pool: bool,

    pub synth_n: usize,
    pub synth_trips: usize,
    pub synth: SynthParams,

    pub src: Option<String>,
    pub dst: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::SiGcnRf,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            embed_dim: 500,
            layers: 2,
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            hidden_layers: 15,
            hidden_width: 64,
            train_zero_pairs: false,
            directed: false,
            data: None,
            attractions: None,
            itf: None,
            splits: None,
            notes: None,
            edges: None,
            out: PathBuf::from("out"),
            split: Split::Test,
            split_ratios: DEFAULT_SPLIT_RATIOS,
            merge_window: DEFAULT_MERGE_WINDOW_DAYS,
            range_bins: DEFAULT_RANGE_BINS,
            thresholds: vec![0, 50, 100, 200, 400],
            shap_mode: ShapModeSetting::Auto,
            background: crate::explain::DEFAULT_BACKGROUND_ROWS,
            permutations: crate::explain::DEFAULT_PERMUTATIONS,
            explain_instances: 100,
            pool: true,
            synth_n: 80,
            synth_trips: 2000,
            synth: SynthParams::default(),
            src: None,
            dst: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let v: Vec<f64> = parse_list(key, value)?;
    match v[..] {
        [lo, hi] if lo < hi => Ok((lo, hi)),
        _ => Err(Error::InvalidArgument(format!("{key} needs two increasing numbers, got {value:?}"))),
    }
}

impl RunConfig {
    /// Sets one option by its config-file / flag name. Underscores and
    /// dashes are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        let path = || Some(PathBuf::from(value.trim()));
        match k {
            "model" => self.model = value.parse()?,
            "seed" => {
                self.seed = parse(k, value)?;
                self.train.seed = self.seed;
            }
            "threshold" => self.threshold = parse(k, value)?,
            "epochs" => self.train.max_epochs = parse(k, value)?,
            "patience" => self.train.patience = parse(k, value)?,
            "lr" => self.train.lr = parse(k, value)?,
            "clip-norm" => self.train.clip_max_norm = parse(k, value)?,
            "dropout" => self.train.dropout = parse(k, value)?,
            "log-target" => self.train.log_target = parse_bool(k, value)?,
            "embed-dim" => self.embed_dim = parse(k, value)?,
            "layers" => self.layers = parse(k, value)?,
            "trees" => self.forest.n_estimators = parse(k, value)?,
            "max-depth" => self.forest.max_depth = parse(k, value)?,
            "max-features" => {
                self.forest.max_features = match value.trim() {
                    "third" => MaxFeatures::Third,
                    "all" => MaxFeatures::All,
                    n => MaxFeatures::Count(parse(k, n)?),
                }
            }
            "min-samples-split" => self.forest.min_samples_split = parse(k, value)?,
            "bootstrap" => self.forest.bootstrap = parse_bool(k, value)?,
            "hidden-layers" => self.hidden_layers = parse(k, value)?,
            "hidden-width" => self.hidden_width = parse(k, value)?,
            "train-zero-pairs" => self.train_zero_pairs = parse_bool(k, value)?,
            "directed" => self.directed = parse_bool(k, value)?,
            "data" => self.data = path(),
            "attractions" => self.attractions = path(),
            "itf" => self.itf = path(),
            "splits" => self.splits = path(),
            "notes" => self.notes = path(),
            "edges" => self.edges = path(),
            "out" => self.out = PathBuf::from(value.trim()),
            "split" => self.split = parse(k, value)?,
            "split-ratios" => {
                let r: Vec<f64> = parse_list(k, value)?;
                let [a, b, c] = r[..] else {
                    return Err(Error::InvalidArgument("split-ratios needs three numbers".into()));
                };
                self.split_ratios = (a, b, c);
            }
            "merge-window" => self.merge_window = parse(k, value)?,
            "range-bins" => self.range_bins = parse(k, value)?,
            "thresholds" => self.thresholds = parse_list(k, value)?,
            "shap-mode" => self.shap_mode = value.parse()?,
            "background" => self.background = parse(k, value)?,
            "permutations" => self.permutations = parse(k, value)?,
            "explain-instances" => self.explain_instances = parse(k, value)?,
            "pool" => self.pool = parse_bool(k, value)?,
            "synth-n" => self.synth_n = parse(k, value)?,
            "synth-trips" => self.synth_trips = parse(k, value)?,
            "synth-alpha" => self.synth.alpha = parse(k, value)?,
            "synth-beta" => self.synth.beta = parse(k, value)?,
            "synth-k" => self.synth.k = parse(k, value)?,
            "synth-noise" => self.synth.noise_sigma = parse(k, value)?,
            "synth-min-distance" => self.synth.min_distance_km = parse(k, value)?,
            "synth-mass-range" => self.synth.mass_range = parse_range(k, value)?,
            "synth-lon-range" => self.synth.lon_range = parse_range(k, value)?,
            "synth-lat-range" => self.synth.lat_range = parse_range(k, value)?,
            "src" => self.src = Some(value.trim().to_owned()),
            "dst" => self.dst = Some(value.trim().to_owned()),
            _ => return Err(Error::InvalidArgument(format!("unknown option {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_config_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_owned(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            self.set(key, value).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    /// Defaults, then `env_seed`, then the config file, then `overrides`.
    pub fn load(config: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(seed) = env_seed.filter(|s| !s.trim().is_empty()) {
            cfg.set("seed", seed)
                .map_err(|e| Error::InvalidArgument(format!("FLOWGRAPH_SEED: {e}")))?;
        }
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_config_text(&text, path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn training_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| PathBuf::from("data"))
    }

    /// True when no data location was given explicitly.
    pub fn data_unset(&self) -> bool {
        self.data.is_none() && self.attractions.is_none() && self.itf.is_none() && self.splits.is_none()
    }

    pub fn attractions_path(&self) -> PathBuf {
        self.attractions.clone().unwrap_or_else(|| self.data_dir().join("attractions.csv"))
    }

    pub fn itf_path(&self) -> PathBuf {
        let name = if self.directed { "itf_directed.csv" } else { "itf.csv" };
        self.itf.clone().unwrap_or_else(|| self.data_dir().join(name))
    }

    pub fn splits_path(&self) -> PathBuf {
        let name = if self.directed { "splits_directed.csv" } else { "splits.csv" };
        self.splits.clone().unwrap_or_else(|| self.data_dir().join(name))
    }

    pub fn notes_path(&self) -> PathBuf {
        self.notes.clone().unwrap_or_else(|| self.data_dir().join("trips.jsonl"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_kind_names_round_trip() {
        for k in ModelKind::UNDIRECTED.into_iter().chain([ModelKind::DistmultDirected]) {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.embed_dim, c.layers, c.threshold), (500, 2, 200));
        assert_eq!((c.train.max_epochs, c.train.patience), (50_000, 500));
        assert_eq!((c.train.lr, c.train.clip_max_norm, c.train.dropout), (0.02, 1.0, 0.0));
        assert_eq!((c.forest.n_estimators, c.forest.max_depth), (30, 25));
        assert_eq!(c.hidden_layers, 15);
        assert!(c.thresholds.contains(&200));
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nseed = 7\nembed_dim=32\n\nlr=0.01\nthresholds=0,50, 200\n").unwrap();
        let c = RunConfig::load(Some(&path), Some("3"), &[("lr".into(), "0.05".into())]).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.embed_dim, 32);
        assert_eq!(c.train.lr, 0.05);
        assert_eq!(c.thresholds, vec![0, 50, 200]);

        let c = RunConfig::load(None, Some("3"), &[]).unwrap();
        assert_eq!(c.seed, 3);
        let c = RunConfig::load(None, Some("3"), &[("seed".into(), "9".into())]).unwrap();
        assert_eq!((c.seed, c.training_config().seed), (9, 9));
        assert!(RunConfig::load(None, Some("x"), &[]).is_err());
    }

    #[test]
    fn bad_lines_report_position() {
        let mut c = RunConfig::default();
        let err = c.apply_config_text("seed=1\nnonsense\n", Path::new("x.conf")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = c.apply_config_text("colour=red", Path::new("x.conf")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(c.set("split-ratios", "0.5,0.5").is_err());
        c.set("max_features", "all").unwrap();
        assert_eq!(c.forest.max_features, MaxFeatures::All);
    }

    #[test]
    fn data_paths() {
        let mut c = RunConfig::default();
        c.set("data", "d").unwrap();
        assert_eq!(c.itf_path(), PathBuf::from("d/itf.csv"));
        c.set("directed", "true").unwrap();
        assert_eq!(c.splits_path(), PathBuf::from("d/splits_directed.csv"));
        c.set("itf", "x.csv").unwrap();
        assert_eq!(c.itf_path(), PathBuf::from("x.csv"));
    }
}
