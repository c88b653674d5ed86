use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spi_unroll::restorers::RestorerSpec;
use spi_unroll::training::TrainConfig;
use spi_unroll::{Error, Result};

/// Training images: a directory of PGM/PNG files, or a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub images: usize,
    pub extent: usize,
    pub seed: u64,
    pub dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { images: 500, extent: 32, seed: 1, dir: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub crs: Vec<f64>,
    pub images: usize,
    pub extent: usize,
    pub seed: u64,
    /// Seed of the per-image evaluation operators.
    pub operator_seed: u64,
    pub dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { crs: vec![0.05, 0.10, 0.25], images: 50, extent: 32, seed: 2, operator_seed: 3, dir: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

/// Top-level JSON experiment description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
    pub restorer: Option<RestorerSpec>,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| prefix("train", e))?;
        if self.dataset.images == 0 {
            return Err(Error::InvalidArgument("dataset.images: must be positive".into()));
        }
        if self.dataset.extent == 0 || self.eval.extent == 0 {
            return Err(Error::InvalidArgument("extent: must be positive".into()));
        }
        if self.eval.crs.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::InvalidArgument("eval.crs: entries must lie in (0, 1]".into()));
        }
        if let Some(r) = &self.restorer {
            r.validate()?;
        }
        Ok(())
    }
}

fn prefix(scope: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{scope}.{m}")),
        other => other,
    }
}
