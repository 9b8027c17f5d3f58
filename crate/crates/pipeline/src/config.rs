//! Run configuration, stored as TOML. `configs/default.toml` is
//! `RunConfig::default()` written out.

use std::path::Path;

use mapgen_core::grid::AugmentConfig;
use mapgen_core::{Convention, SsimParams};
use mapgen_nn::{DiscriminatorConfig, GeneratorConfig, NadamConfig};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Map preparation: curation, simulation and tiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Output voxel size, Å.
    pub voxel: f64,
    /// Padding around the structure's bounding box when cropping, Å.
    pub margin: f64,
    /// Simulation resolution, Å.
    pub resolution: f64,
    pub convention: Convention,
    /// Pairs whose correlation falls below this are dropped.
    pub filter_threshold: f64,
    pub train_stride: usize,
    pub infer_stride: usize,
    /// Augment simulated training inputs.
    pub augment: bool,
    /// `false` trains on raw maps (resampled and normalized, not cropped).
    pub use_curated_targets: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            voxel: 1.0,
            margin: 5.0,
            resolution: 2.0,
            convention: Convention::ChimeraxMolmap,
            filter_threshold: 0.65,
            train_stride: mapgen_core::tiler::TRAINING_STRIDE,
            infer_stride: mapgen_core::tiler::INFERENCE_STRIDE,
            augment: true,
            use_curated_targets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the adversarial term in the generator loss.
    pub alpha: f64,
    pub lr: f64,
    pub seed: u64,
    /// `false` drops the SmoothL1 term; the generator then trains on the
    /// adversarial loss alone.
    pub use_l1: bool,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
    /// Stop after this many steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub shuffle: bool,
}

impl Default for TrainingRunConfig {
    fn default() -> Self {
        TrainingRunConfig {
            epochs: 150,
            batch_size: 128,
            alpha: 0.01,
            lr: 1e-4,
            seed: 0,
            use_l1: true,
            disc_steps: 1,
            max_steps: None,
            shuffle: true,
        }
    }
}

impl TrainingRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.disc_steps == 0 {
            return Err(PipelineError::Config("epochs, batch_size and disc_steps must be >= 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(PipelineError::Config(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PipelineError::Config(format!("lr {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn nadam(&self, base: &NadamConfig) -> NadamConfig {
        NadamConfig { lr: self.lr, ..*base }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub train: TrainingRunConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// `lr` here is overridden by `train.lr`.
    pub optimizer: NadamConfig,
    pub ssim: SsimParams,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.data;
        for (name, v) in [("voxel", d.voxel), ("resolution", d.resolution)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipelineError::Config(format!("{name} {v} must be positive")));
            }
        }
        if !(d.margin >= 0.0 && d.margin.is_finite()) {
            return Err(PipelineError::Config(format!("margin {} must be >= 0", d.margin)));
        }
        for s in [d.train_stride, d.infer_stride] {
            if !(1..=mapgen_core::tiler::TILE).contains(&s) {
                return Err(PipelineError::Config(format!("stride {s} outside 1..=32")));
            }
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }
}
