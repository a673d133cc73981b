use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::models::ModelConfig;

use super::config::TrainConfig;

pub const CSV_HEADER: [&str; 10] = [
    "step",
    "epoch",
    "flops",
    "lr",
    "train_total",
    "train_energy",
    "train_force",
    "train_iso",
    "train_aniso",
    "val_total",
];

/// One optimizer step. `flops` is cumulative training compute after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based optimizer step.
    pub step: usize,
    /// 1-based epoch.
    pub epoch: usize,
    pub flops: u64,
    pub lr: f64,
    pub train: LossBreakdown,
    /// Set on the last step of a validation epoch.
    pub val: Option<LossBreakdown>,
}

/// Everything logged by one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub optimizer: String,
    /// Non-embedding parameter count.
    pub params: usize,
    pub dataset_size: usize,
    pub steps: Vec<StepLog>,
    pub wall_time_s: f64,
    pub epoch_times_s: Vec<f64>,
    pub stopped_early: bool,
    /// Marked anomalous by the user; fits may exclude flagged runs.
    pub flagged: bool,
    pub failure: Option<String>,
}

/// Equality ignores wall-clock timings, which never repeat exactly.
impl PartialEq for RunRecord {
    fn eq(&self, o: &Self) -> bool {
        self.run_id == o.run_id
            && self.model == o.model
            && self.train == o.train
            && self.optimizer == o.optimizer
            && self.params == o.params
            && self.dataset_size == o.dataset_size
            && self.steps == o.steps
            && self.stopped_early == o.stopped_early
            && self.flagged == o.flagged
            && self.failure == o.failure
    }
}

impl RunRecord {
    pub fn new(
        run_id: &str,
        model: ModelConfig,
        train: TrainConfig,
        optimizer: String,
        params: usize,
        dataset_size: usize,
    ) -> Self {
        Self {
            run_id: run_id.to_string(),
            model,
            train,
            optimizer,
            params,
            dataset_size,
            steps: Vec::new(),
            wall_time_s: 0.0,
            epoch_times_s: Vec::new(),
            stopped_early: false,
            flagged: false,
            failure: None,
        }
    }

    /// `(cumulative flops, val total, step)` for every validation event.
    pub fn val_points(&self) -> Vec<(u64, f64, usize)> {
        self.steps
            .iter()
            .filter_map(|s| s.val.map(|v| (s.flops, v.total, s.step)))
            .collect()
    }

    pub fn best_val(&self) -> Option<f64> {
        self.val_points().into_iter().map(|p| p.1).reduce(f64::min)
    }

    pub fn final_val(&self) -> Option<f64> {
        self.val_points().last().map(|p| p.1)
    }

    pub fn total_flops(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.flops)
    }

    /// Mean training total over the steps of `epoch`.
    pub fn epoch_train_loss(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.epoch == epoch)
            .map(|s| s.train.total)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn last_epoch(&self) -> usize {
        self.steps.last().map_or(0, |s| s.epoch)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for s in &self.steps {
            let t = &s.train;
            out.write_record([
                s.step.to_string(),
                s.epoch.to_string(),
                s.flops.to_string(),
                s.lr.to_string(),
                t.total.to_string(),
                t.energy.to_string(),
                t.force.to_string(),
                t.iso.to_string(),
                t.aniso.to_string(),
                s.val.map(|v| v.total.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
