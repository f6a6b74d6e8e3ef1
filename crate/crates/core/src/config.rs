//! Run configuration shared by every subcommand, loadable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{Normalization, Rounding};
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::gn::FiberParams;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 picks the number of available cores.
    pub workers: usize,
    pub fiber: FiberParams,
    pub experimental_grid: bool,
    /// Base directory for relative output paths.
    pub output_dir: Option<PathBuf>,
    pub analysis: AnalysisSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub rounding: Rounding,
    pub histogram_bin_db: f64,
    pub sweep_realizations: usize,
    pub anchor_freq_thz: f64,
    pub frequency_normalization: Normalization,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            rounding: Rounding::Ceil,
            histogram_bin_db: 0.02,
            sweep_realizations: 2000,
            anchor_freq_thz: 193.7,
            frequency_normalization: Normalization::AnchorMean,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            workers: 0,
            fiber: FiberParams::default(),
            experimental_grid: false,
            output_dir: None,
            analysis: AnalysisSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::error::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        if !(self.analysis.histogram_bin_db > 0.0) {
            return Err(Error::InvalidConfig("histogram_bin_db must be positive".into()));
        }
        if self.analysis.sweep_realizations == 0 {
            return Err(Error::InvalidConfig("sweep_realizations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            fiber: self.fiber,
            experimental_grid: self.experimental_grid,
        }
    }

    pub fn effective_workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.output_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}
