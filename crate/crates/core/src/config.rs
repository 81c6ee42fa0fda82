//! Run configuration. Every key has a default; the defaults follow the
//! published hyperparameters for the synthetic-like (Griffith-USGS) setting
//! where one exists.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::{KernelParams, MeanFieldConfig, SpectralSource};
use crate::data::{AugmentConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::refiner::Placement;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub cnn: CnnConfig,
    pub sgd: SgdSection,
    pub crf: CrfConfig,
    pub refiner: RefinerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub group_size: usize,
    /// Odd patch side `M = N`.
    pub patch: usize,
    pub train_per_class: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            group_size: 20,
            patch: 11,
            train_per_class: 15,
            train_fraction: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub preset: String,
    pub epochs: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            preset: "griffith-cls".into(),
            epochs: 600,
        }
    }
}

/// Optimiser settings of the band-group CNNs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSection {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for SgdSection {
    fn default() -> Self {
        SgdSection {
            learning_rate: 0.005,
            batch_size: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfConfig {
    pub unary_preset: String,
    pub pairwise_preset: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Side of the square training tiles cut from the labels.
    pub tile: usize,
    pub train_tiles: usize,
    pub val_tiles: usize,
    pub iterations: usize,
    pub tolerance: f64,
    pub w1: f64,
    pub w2: f64,
    pub theta_alpha: [f64; 2],
    /// Appearance bandwidth; 0 selects a tenth of the feature range.
    pub theta_gamma: f64,
    pub spectral: SpectralSource,
    pub learn_mu: bool,
    /// Pick `w1`, `w2` and `theta_gamma` by validation-tile accuracy.
    pub grid_search: bool,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            unary_preset: "griffith-seg".into(),
            pairwise_preset: "griffith-seg".into(),
            epochs: 500,
            learning_rate: 0.005,
            batch_size: 1,
            tile: 16,
            train_tiles: 4,
            val_tiles: 1,
            iterations: 10,
            tolerance: 1e-4,
            w1: 1.0,
            w2: 1.0,
            theta_alpha: [3.0, 3.0],
            theta_gamma: 0.0,
            spectral: SpectralSource::Features,
            learn_mu: false,
            grid_search: false,
        }
    }
}

impl CrfConfig {
    pub fn mean_field(&self) -> MeanFieldConfig {
        MeanFieldConfig {
            iterations: self.iterations,
            tolerance: self.tolerance,
        }
    }

    /// Kernel parameters, resolving an automatic appearance bandwidth
    /// against `value_range`.
    pub fn kernel(&self, value_range: f64) -> KernelParams {
        let theta_gamma = if self.theta_gamma > 0.0 {
            self.theta_gamma
        } else {
            (0.1 * value_range).max(1e-6)
        };
        KernelParams {
            w1: self.w1,
            w2: self.w2,
            theta_alpha: self.theta_alpha,
            theta_gamma,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinerConfig {
    pub placement: Placement,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = crate::error::read_file(path)?;
        Self::from_toml(&String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.patch.is_multiple_of(2) {
            return Err(Error::Config(format!("data.patch must be odd, got {}", d.patch)));
        }
        if d.group_size == 0 || d.train_per_class == 0 {
            return Err(Error::Config(
                "data.group_size and data.train_per_class must be positive".into(),
            ));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.train_fraction must lie in (0, 1), got {}",
                d.train_fraction
            )));
        }
        self.augment.validate()?;
        let c = &self.crf;
        if c.tile < 2 || c.train_tiles == 0 {
            return Err(Error::Config(
                "crf.tile must be at least 2 and crf.train_tiles positive".into(),
            ));
        }
        if !(self.sgd.learning_rate > 0.0 && c.learning_rate > 0.0) || self.sgd.batch_size == 0 || c.batch_size == 0 {
            return Err(Error::Config("learning rates and batch sizes must be positive".into()));
        }
        Ok(())
    }
}
