//! Run configuration: defaults, then the `--config` file, then flags.

use std::path::{Path, PathBuf};

use aigi_core::data::Split;
use aigi_core::TrainConfig;
use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::Usage;

/// Layout of a `--config` file. Each subcommand reads its own table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dire: Option<DireRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportRun>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read --config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Usage(format!("invalid --config {}: {e}", path.display())).into())
    }

    /// Writes the resolved configuration before any work starts.
    pub fn snapshot(&self, run_dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string(self).context("serializing config snapshot")?;
        std::fs::write(run_dir.join("config.toml"), text).context("writing config snapshot")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    pub backbone: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    pub prompt_prefix: bool,
    pub resolution: usize,
    pub embed_dim: usize,
    pub fit: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        let spec = aigi_core::BackboneSpec::default();
        Self {
            manifest: None,
            registry: None,
            backbone: spec.name,
            weights: None,
            prompt_prefix: false,
            resolution: spec.resolution,
            embed_dim: spec.embed_dim,
            fit: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictRun {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub batch_size: usize,
}

impl Default for PredictRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            manifest: None,
            input: None,
            split: None,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateRun {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    pub predictions: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DireRun {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
    pub steps: usize,
    pub oracle_seed: u64,
    pub resolution: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub save_maps: bool,
}

impl Default for DireRun {
    fn default() -> Self {
        Self {
            oracle: None,
            steps: 20,
            oracle_seed: 0,
            resolution: 32,
            manifest: None,
            registry: None,
            input: None,
            split: None,
            threshold: None,
            save_maps: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportRun {
    pub reports: Vec<PathBuf>,
}

/// Overwrites `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Same as [`set`] for optional settings.
pub fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Usage(format!("missing required setting --{flag}")).into())
}
