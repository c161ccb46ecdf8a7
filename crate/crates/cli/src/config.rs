use std::fs;
use std::path::{Path, PathBuf};

use graphgae::anomaly::ThresholdPolicy;
use graphgae::data::InjectionConfig;
use graphgae::model::{EncoderKind, DEFAULT_DENSE_LIMIT, DEFAULT_LAMBDA, DEFAULT_LEAKY_SLOPE};
use graphgae::training::{TrainConfig, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One JSON document describing a whole run. Every section is optional in
/// the file; omitted fields take their defaults and the resolved document
/// is echoed into the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub anomaly: AnomalyConfig,
    pub inject: Option<InjectionConfig>,
    pub output: OutputConfig,
}

/// Either a pair of files or synthetic generator settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub normalize_features: bool,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    pub avg_degree: f64,
    pub feat_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_nodes: 500,
            avg_degree: 8.0,
            feat_dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_kind: EncoderKind,
    /// Input, hidden..., embedding sizes; input 0 means "feature width".
    pub layer_dims: Vec<usize>,
    pub lambda: f64,
    pub self_loops: bool,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_kind: EncoderKind::Gat,
            layer_dims: vec![0, DEFAULT_HIDDEN_DIM, DEFAULT_EMBED_DIM],
            lambda: DEFAULT_LAMBDA,
            self_loops: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub neg_ratio: f64,
    pub dense_limit: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 0.01,
            epochs: 200,
            seed: 0,
            neg_ratio: 1.0,
            dense_limit: DEFAULT_DENSE_LIMIT,
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreModeChoice {
    /// Dense up to `train.dense_limit` nodes, sampled beyond.
    #[default]
    Auto,
    Dense,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub threshold: ThresholdPolicy,
    pub score_mode: ScoreModeChoice,
    /// Seeds the per-node non-neighbor draws in sampled mode.
    pub seed: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            threshold: ThresholdPolicy::Contamination(0.05),
            score_mode: ScoreModeChoice::Auto,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("graphgae-out"),
        }
    }
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too; its embedded
    /// config is used.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let doc = match value.get("config") {
            Some(inner) if value.get("command").is_some() => inner.clone(),
            _ => value,
        };
        let cfg: RunConfig = serde_json::from_value(doc)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.anomaly.seed = seed;
        if let Some(s) = &mut self.data.synthetic {
            s.seed = seed;
        }
        if let Some(i) = &mut self.inject {
            i.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        match (&d.edges, &d.features, &d.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            (None, None, None) => {
                return Err(CliError::Config(
                    "data needs either edges and features paths or a synthetic section".into(),
                ))
            }
            (_, _, Some(_)) => {
                return Err(CliError::Config("data cannot mix file paths with a synthetic section".into()))
            }
            _ => return Err(CliError::Config("data.edges and data.features must be given together".into())),
        }
        if d.synthetic.is_some() && d.labels.is_some() {
            return Err(CliError::Config("data.labels only applies to file input".into()));
        }
        self.train_config().validate()?;
        self.anomaly.threshold.validate()?;
        if let Some(inj) = &self.inject {
            if inj.clique_size < 2 || !(0.0..=1.0).contains(&inj.feature_swap_fraction) {
                return Err(CliError::Config(
                    "inject needs clique_size >= 2 and feature_swap_fraction in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr: self.train.lr,
            lambda: self.model.lambda,
            seed: self.train.seed,
            neg_ratio: self.train.neg_ratio,
            dense_limit: self.train.dense_limit,
            encoder_kind: self.model.encoder_kind,
            layer_dims: self.model.layer_dims.clone(),
            self_loops: self.model.self_loops,
            leaky_slope: self.model.leaky_slope,
            log_every: self.train.log_every,
        }
    }
}
