use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{EnergyMode, LossWeights};
use crate::tensor::Precision;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub max_lr: f64,
    /// Global gradient-norm bound.
    pub grad_clip: f64,
    pub val_period_epochs: usize,
    pub viz_period_epochs: usize,
    pub precision: Precision,
    pub workers: usize,
    /// Parse a file-backed dataset once and keep it in memory.
    pub cache: bool,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub energy_mode: EnergyMode,
    /// Stop after this many validation events without improvement.
    pub early_stop_patience: Option<usize>,
    /// Where checkpoints and panels go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    pub run_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            max_lr: 6e-4,
            grad_clip: 100.0,
            val_period_epochs: 2,
            viz_period_epochs: 5,
            precision: Precision::High,
            workers: 1,
            cache: false,
            seed: 0,
            loss_weights: LossWeights::default(),
            energy_mode: EnergyMode::PerStructure,
            early_stop_patience: None,
            out_dir: None,
            run_id: "run".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(Error::config(format!(
                "max_lr must be positive, got {}",
                self.max_lr
            )));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(Error::config(format!(
                "grad_clip must be positive, got {}",
                self.grad_clip
            )));
        }
        if self.val_period_epochs == 0 || self.viz_period_epochs == 0 {
            return Err(Error::config(
                "validation and visualization periods must be at least 1",
            ));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        if self.workers > 1 && !self.batch_size.is_multiple_of(self.workers) {
            return Err(Error::config(format!(
                "batch_size {} is not divisible by {} workers",
                self.batch_size, self.workers
            )));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::config("early-stop patience must be at least 1"));
        }
        self.loss_weights.validate()
    }
}
