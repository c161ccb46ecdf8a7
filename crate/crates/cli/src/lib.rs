//! Command implementations behind the `graphgae` binary.
//!
//! Every command reads one [`RunConfig`], writes its artifacts into
//! `output.dir`, and reports failures as a [`CliError`] whose
//! [`exit_code`](CliError::exit_code) is 1 for configuration problems, 2 for
//! data problems and 3 for training divergence.

mod config;

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use graphgae::anomaly::{
    classify, evaluate, node_scores, select_threshold, MetricsReport, ScoreMode, ThresholdPolicy,
};
use graphgae::data::{generate_synthetic, inject_anomalies, load_labels_csv, Dataset, DatasetStats, IdMap};
use graphgae::persist::{load_model, save_model};
use graphgae::training::train;
use log::info;
use serde::{Deserialize, Serialize};

pub use config::{
    AnomalyConfig, DataConfig, ModelConfig, OutputConfig, RunConfig, ScoreModeChoice, SyntheticConfig,
    TrainSection,
};

pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const SCORE_MANIFEST_FILE: &str = "score_manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const EDGES_FILE: &str = "edges.csv";
pub const FEATURES_FILE: &str = "features.json";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Diverged(_) => "diverged",
        }
    }

    /// Single-line JSON for the error stream.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "code": self.exit_code(),
            "kind": self.kind(),
            "reason": self.to_string(),
        })
        .to_string()
    }
}

impl From<graphgae::Error> for CliError {
    fn from(e: graphgae::Error) -> Self {
        use graphgae::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Diverged { .. } => CliError::Diverged(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("io error on {}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub anomalous_nodes: usize,
    pub edges_added: usize,
    pub feature_swaps: usize,
}

/// The dataset a config describes, with injection applied when configured.
pub fn build_dataset(cfg: &RunConfig) -> Result<(Dataset, Option<InjectionRecord>), CliError> {
    let d = &cfg.data;
    let base = match (&d.edges, &d.features, &d.synthetic) {
        (Some(e), Some(f), None) => Dataset::load(e, f, d.labels.as_deref(), d.normalize_features)?,
        (None, None, Some(s)) => generate_synthetic(s.num_nodes, s.avg_degree, s.feat_dim, s.seed)?,
        _ => return Err(CliError::Config("incomplete data section".into())),
    };
    match &cfg.inject {
        None => Ok((base, None)),
        Some(inj) => {
            let (ds, summary) = inject_anomalies(&base, inj)?;
            let record = InjectionRecord {
                anomalous_nodes: ds.labels.as_ref().map_or(0, |l| l.iter().filter(|&&v| v == 1).count()),
                edges_added: summary.edges_added,
                feature_swaps: summary.swaps.len(),
            };
            Ok((ds, Some(record)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLoss {
    pub epoch: usize,
    pub recon: f64,
    pub reg: f64,
    pub total: f64,
}

/// Written by `train`. Feeding it back as `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub command: String,
    pub config: RunConfig,
    pub dataset: DatasetStats,
    pub injection: Option<InjectionRecord>,
    pub initial_loss: FinalLoss,
    pub final_loss: FinalLoss,
    pub wall_time_secs: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainManifest, CliError> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    let (ds, injection) = build_dataset(&cfg)?;
    if cfg.model.layer_dims.first() == Some(&0) {
        cfg.model.layer_dims[0] = ds.features.cols();
    }
    let (model, log) = train(&ds.graph, &ds.features, &cfg.train_config())?;
    let out = prepare_out(&cfg)?;
    save_model(&out.join(MODEL_FILE), &model)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut w = BufWriter::new(file);
    log.write_csv(&mut w).map_err(|e| io_err(&log_path, e))?;
    w.flush().map_err(|e| io_err(&log_path, e))?;

    let as_loss = |r: &graphgae::training::LogRecord| FinalLoss {
        epoch: r.epoch,
        recon: r.recon,
        reg: r.reg,
        total: r.total,
    };
    let manifest = TrainManifest {
        command: "train".into(),
        dataset: ds.stats(),
        injection,
        initial_loss: as_loss(log.records.first().expect("at least one epoch")),
        final_loss: as_loss(log.records.last().expect("at least one epoch")),
        config: cfg,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    info!("wrote model, loss log and manifest to {}", out.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreManifest {
    pub command: String,
    pub config: RunConfig,
    pub model: PathBuf,
    pub score_mode: ScoreMode,
    pub threshold_policy: ThresholdPolicy,
    pub threshold: f64,
    pub num_nodes: usize,
    pub num_flagged: usize,
}

pub struct ScoreOutcome {
    pub manifest: ScoreManifest,
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    pub dataset: Dataset,
}

pub fn resolve_score_mode(cfg: &RunConfig, num_nodes: usize) -> ScoreMode {
    match cfg.anomaly.score_mode {
        ScoreModeChoice::Dense => ScoreMode::Dense,
        ScoreModeChoice::Sampled => ScoreMode::Sampled,
        ScoreModeChoice::Auto if num_nodes <= cfg.train.dense_limit => ScoreMode::Dense,
        ScoreModeChoice::Auto => ScoreMode::Sampled,
    }
}

/// Scores every node with a saved model. `model_path` defaults to the
/// model file in the output directory.
pub fn cmd_score(cfg: &RunConfig, model_path: Option<&Path>) -> Result<ScoreOutcome, CliError> {
    let (ds, _) = build_dataset(cfg)?;
    let out = prepare_out(cfg)?;
    let model_path = model_path.map_or_else(|| out.join(MODEL_FILE), Path::to_path_buf);
    let model = load_model(&model_path)?;
    if model.input_dim() != ds.features.cols() {
        return Err(CliError::Data(format!(
            "model expects {} features, data has {}",
            model.input_dim(),
            ds.features.cols()
        )));
    }
    let z = model.embed(&ds.graph, &ds.features)?;
    let mode = resolve_score_mode(cfg, ds.graph.num_nodes());
    let scores = node_scores(&ds.graph, &z, mode, cfg.anomaly.seed)?.scores;
    let threshold = select_threshold(&scores, cfg.anomaly.threshold)?;
    let flags = classify(&scores, threshold);

    let path = out.join(SCORES_FILE);
    write_scores_csv(&path, &scores, &flags, &ds.id_map)?;
    let manifest = ScoreManifest {
        command: "score".into(),
        config: cfg.clone(),
        model: model_path,
        score_mode: mode,
        threshold_policy: cfg.anomaly.threshold,
        threshold,
        num_nodes: scores.len(),
        num_flagged: flags.iter().filter(|&&f| f).count(),
    };
    write_json(&out.join(SCORE_MANIFEST_FILE), &manifest)?;
    Ok(ScoreOutcome {
        manifest,
        scores,
        flags,
        dataset: ds,
    })
}

pub fn write_scores_csv(path: &Path, scores: &[f64], flags: &[bool], ids: &IdMap) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "node_id,score,flag")?;
        for (i, (s, f)) in scores.iter().zip(flags).enumerate() {
            writeln!(w, "{},{:.16e},{}", ids.original_id(i), s, *f as u8)?;
        }
        w.flush()
    };
    body().map_err(|e| io_err(path, e))
}

/// Rows of a scores file in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub ids: IdMap,
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
}

pub fn read_scores_csv(path: &Path) -> Result<ScoreTable, CliError> {
    let bad = |line: u64, msg: String| CliError::Data(format!("{}:{line}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["node_id", "score", "flag"] {
        return Err(bad(1, "expected header node_id,score,flag".into()));
    }
    let mut table = ScoreTable {
        ids: IdMap::default(),
        scores: Vec::new(),
        flags: Vec::new(),
    };
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(k).map(str::trim).ok_or_else(|| bad(line, "missing field".into()));
        let id: u64 = field(0)?.parse().map_err(|_| bad(line, "bad node id".into()))?;
        let score: f64 = field(1)?.parse().map_err(|_| bad(line, "bad score".into()))?;
        let flag = match field(2)? {
            "0" => false,
            "1" => true,
            other => return Err(bad(line, format!("flag must be 0 or 1, found {other:?}"))),
        };
        if !seen.insert(id) {
            return Err(bad(line, format!("duplicate node id {id}")));
        }
        table.ids.intern(id);
        table.scores.push(score);
        table.flags.push(flag);
    }
    Ok(table)
}

/// Computes metrics for a scores file against labels. Labels come from
/// `labels_path` when given, otherwise from the dataset the config
/// describes.
pub fn cmd_eval(
    cfg: &RunConfig,
    scores_path: Option<&Path>,
    labels_path: Option<&Path>,
) -> Result<MetricsReport, CliError> {
    let out = prepare_out(cfg)?;
    let scores_path = scores_path.map_or_else(|| out.join(SCORES_FILE), Path::to_path_buf);
    let table = read_scores_csv(&scores_path)?;
    let labels = match labels_path.or(cfg.data.labels.as_deref()) {
        Some(p) => load_labels_csv(p, &table.ids)?,
        None => {
            let (ds, _) = build_dataset(cfg)?;
            let ds_labels = ds
                .labels
                .as_ref()
                .ok_or_else(|| CliError::Data("no labels: pass --labels or configure inject".into()))?;
            if ds.id_map.len() != table.ids.len() {
                return Err(CliError::Data(format!(
                    "scores cover {} nodes, dataset has {}",
                    table.ids.len(),
                    ds.id_map.len()
                )));
            }
            (0..table.ids.len())
                .map(|i| {
                    let id = table.ids.original_id(i);
                    ds.id_map
                        .dense_id(id)
                        .map(|d| ds_labels[d])
                        .ok_or_else(|| CliError::Data(format!("node {id} is not in the dataset")))
                })
                .collect::<Result<Vec<u8>, _>>()?
        }
    };
    let report = evaluate(&table.scores, &table.flags, &labels)?;
    write_json(&out.join(METRICS_FILE), &report)?;
    Ok(report)
}

/// Writes the injected dataset as edge CSV, feature JSON and label CSV.
pub fn cmd_inject(cfg: &RunConfig) -> Result<InjectionRecord, CliError> {
    let mut cfg = cfg.clone();
    if cfg.inject.is_none() {
        cfg.inject = Some(Default::default());
    }
    let (ds, record) = build_dataset(&cfg)?;
    let out = prepare_out(&cfg)?;
    ds.save(
        &out.join(EDGES_FILE),
        &out.join(FEATURES_FILE),
        Some(&out.join(LABELS_FILE)),
    )?;
    Ok(record.expect("injection configured"))
}
