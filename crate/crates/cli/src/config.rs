use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gate_adapt::evaluation::CalibrationPolicy;
use gate_adapt::regressor::ModelConfig;
use gate_adapt::scene_sim::{DatasetConfig, Split};
use gate_adapt::training::{DaConfig, FinetuneConfig, PretrainConfig};

use crate::CliError;

/// Methods that can be scored, in results-table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MeanPredictor,
    ZeroShot,
    Pencil,
    Da,
    Ours,
    /// Predicts the ground truth; a sanity row for the metric pipeline.
    Oracle,
}

impl Method {
    pub const TABLE: [Method; 5] = [Method::MeanPredictor, Method::ZeroShot, Method::Pencil, Method::Da, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::MeanPredictor => "mean-predictor",
            Method::ZeroShot => "zero-shot",
            Method::Pencil => "pencil",
            Method::Da => "da",
            Method::Ours => "ours",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub calibration: CalibrationPolicy,
    pub methods: Vec<Method>,
    pub ablation_counts: Vec<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            calibration: CalibrationPolicy::FullTestSet,
            methods: Method::TABLE.to_vec(),
            ablation_counts: vec![1, 10, 20, 40],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayConfig {
    pub method: Method,
    pub split: Split,
    /// Frame indices into the concatenated frames of `split`.
    pub frames: Vec<usize>,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        OverlayConfig { method: Method::Ours, split: Split::RealTest, frames: vec![0, 100, 200] }
    }
}

/// One experiment. Every section but `seed` has defaults; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Read the dataset from here instead of `<out>/dataset`.
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub da: DaConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub overlay: OverlayConfig,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            dataset_dir: None,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            da: DaConfig::default(),
            evaluation: EvaluationConfig::default(),
            overlay: OverlayConfig::default(),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config { path: origin.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
