//! Run configuration files. Every command takes `--config <toml>` plus a
//! handful of overrides; the effective configuration is echoed into every
//! artifact so a run can be reproduced from its outputs.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thresholds_core::data::{ingest_csv, ItemMetadata, ItemResponseMatrix};
use thresholds_core::error::Error as CoreError;
use thresholds_core::estimate::FitOptions;
use thresholds_core::model::{Identification, ModelSpec, SlopeMode};
use thresholds_core::response::ResponseFunctionKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub response: ResponseFunctionKind,
    pub slope_mode: SlopeMode,
    #[serde(default)]
    pub quadrature_nodes: Option<usize>,
    #[serde(default)]
    pub penalty_lambda: Option<f64>,
}

impl ModelSection {
    pub fn build_spec(&self, data: &ItemResponseMatrix) -> ModelSpec {
        let mut spec = ModelSpec::new(self.response, data.items().to_vec(), self.slope_mode);
        if let Some(n) = self.quadrature_nodes {
            spec.quadrature_nodes = n;
        }
        if let Some(lambda) = self.penalty_lambda {
            spec.penalty_lambda = lambda;
        }
        if spec.slope_mode == SlopeMode::SplineFree {
            spec.identification = Identification::PenaltyOnly;
        }
        spec
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub max_iterations: Option<usize>,
    pub grad_tolerance: Option<f64>,
    pub random_starts: Option<usize>,
    pub seed: Option<u64>,
    pub compute_se: Option<bool>,
}

impl FitSection {
    pub fn build_options(&self) -> FitOptions {
        let mut opts = FitOptions::default();
        if let Some(v) = self.max_iterations {
            opts.max_iterations = v;
        }
        if let Some(v) = self.grad_tolerance {
            opts.grad_tolerance = v;
        }
        if let Some(v) = self.random_starts {
            opts.random_starts = v;
        }
        if let Some(v) = self.seed {
            opts.seed = v;
        }
        if let Some(v) = self.compute_se {
            opts.compute_se = v;
        }
        opts
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    pub metadata: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub curves_out: Option<PathBuf>,
    pub model: ModelSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub data: PathBuf,
    pub metadata: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub full: ModelSection,
    pub reduced: ModelSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub data: PathBuf,
    pub metadata: PathBuf,
    pub fit_report: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesConfig {
    pub data: PathBuf,
    pub metadata: PathBuf,
    pub fit_report: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Which tables to emit; all three by default.
    #[serde(default)]
    pub kinds: Option<Vec<String>>,
    /// Ability at which PT curves are evaluated.
    #[serde(default)]
    pub theta: Option<f64>,
    /// Response level for IC curves; per-item default when absent.
    #[serde(default)]
    pub ic_y: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
}

/// Scenario file: generating model plus study settings. The seed is
/// mandatory (supplied here or by `--seed`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub replications: Option<usize>,
    pub n_persons: usize,
    pub sigma_theta: f64,
    pub spec: ModelSpecFile,
    pub difficulties: Vec<thresholds_core::difficulty::DifficultyFunction>,
    #[serde(default)]
    pub fit: FitSection,
}

/// Model spec as written in scenario files (items inline).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecFile {
    pub response: ResponseFunctionKind,
    pub slope_mode: SlopeMode,
    #[serde(default)]
    pub quadrature_nodes: Option<usize>,
    #[serde(default)]
    pub penalty_lambda: Option<f64>,
    pub items: Vec<thresholds_core::data::ItemSpec>,
}

impl ModelSpecFile {
    pub fn build_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.response, self.items.clone(), self.slope_mode);
        if let Some(n) = self.quadrature_nodes {
            spec.quadrature_nodes = n;
        }
        if let Some(lambda) = self.penalty_lambda {
            spec.penalty_lambda = lambda;
        }
        if spec.slope_mode == SlopeMode::SplineFree {
            spec.identification = Identification::PenaltyOnly;
        }
        spec
    }
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    use anyhow::Context;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::anyhow!("cannot parse {}: {e}", path.display()))
}

pub fn load_dataset(data: &Path, metadata: &Path) -> Result<ItemResponseMatrix, CoreError> {
    let meta = ItemMetadata::from_path(metadata)?;
    ingest_csv(data, &meta)
}
