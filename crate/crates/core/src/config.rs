//! Run configuration: a flat TOML document mirroring the struct fields, with
//! defaults reproducing the reference training recipe.

use candle_core::Device;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::ccl::SegNetConfig;
use crate::drst::{DrstNetConfig, LossWeights};
use crate::error::{Error, Result};
use crate::nn::AdamCfg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpochSchedule {
    pub drst: usize,
    pub source: usize,
    pub joint: usize,
}

impl Default for EpochSchedule {
    fn default() -> Self {
        Self { drst: 200, source: 100, joint: 800 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl OptimConfig {
    pub fn to_adam(self) -> AdamCfg {
        AdamCfg {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        // Translation-network defaults; beta1 follows the usual adversarial
        // training convention.
        Self { lr: 1e-4, weight_decay: 1e-4, beta1: 0.5, beta2: 0.999 }
    }
}

fn default_seg_optimizer() -> OptimConfig {
    OptimConfig { lr: 1e-4, weight_decay: 0.0, beta1: 0.9, beta2: 0.999 }
}

/// Switches dropping individual joint-stage loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Drop the source expert entirely: no source pretraining, no teacher
    /// terms; the target expert learns from translated images alone.
    pub no_fs: bool,
    /// Drop the ground-truth Dice terms once the consistency terms start.
    pub no_seg_after_tau: bool,
    /// Drop both consistency cross-entropy terms.
    pub no_ccl: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: usize,
    pub batch_size: usize,
    pub epochs: EpochSchedule,
    /// Consistency starting flag within the joint stage; 0 activates the
    /// consistency terms from the first joint epoch.
    pub tau: usize,
    /// Optimizer for every translation subnetwork.
    pub optimizer: OptimConfig,
    /// Optimizer for the two segmentation experts (no schedule).
    pub seg_optimizer: OptimConfig,
    pub loss_weights: LossWeights,
    pub ablations: Ablations,
    /// Invert target-domain intensities during preprocessing.
    pub invert_target: bool,
    /// Keep updating the translation networks during the joint stage.
    pub cotrain_drst: bool,
    pub data_root: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    pub split_seed: u64,
    /// Held-out test images per domain.
    pub test_count: usize,
    pub drst_net: DrstNetConfig,
    pub seg_net: SegNetConfig,
    /// Compute device; only "cpu" is supported in this build. The
    /// `DCDA_DEVICE` environment variable overrides it.
    pub device: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            image_size: 384,
            batch_size: 4,
            epochs: EpochSchedule::default(),
            tau: 0,
            optimizer: OptimConfig::default(),
            seg_optimizer: default_seg_optimizer(),
            loss_weights: LossWeights::default(),
            ablations: Ablations::default(),
            invert_target: false,
            cotrain_drst: false,
            data_root: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("outputs"),
            split_seed: 7,
            test_count: 50,
            drst_net: DrstNetConfig::default(),
            seg_net: SegNetConfig::default(),
            device: "cpu".to_string(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.image_size % self.seg_net.downsample_factor() != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by the segmentation factor {}",
                self.image_size,
                self.seg_net.downsample_factor()
            )));
        }
        if self.image_size % self.drst_net.content_factor() != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by the content factor {}",
                self.image_size,
                self.drst_net.content_factor()
            )));
        }
        Ok(())
    }

    /// Resolves the compute device, honoring `DCDA_DEVICE` when set.
    pub fn resolve_device(&self) -> Result<Device> {
        let name = std::env::var("DCDA_DEVICE").unwrap_or_else(|_| self.device.clone());
        match name.as_str() {
            "cpu" | "" => Ok(Device::Cpu),
            other => Err(Error::Config(format!(
                "unsupported device {other:?}; this build runs on \"cpu\""
            ))),
        }
    }
}
