use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_jsonl, DatasetSplit, MaterialRecord, SyntheticParams};
use crate::error::{Error, Result};
use crate::models::{count_params, Model, ModelConfig, ModelKind};
use crate::training::{train, RunRecord, TrainConfig};
use crate::viz::{emit_loglog_plot, loglog_csv, Curve};

use super::fit::{fit_power_law, PowerLawFit};
use super::pareto::{pareto_points, FrontierPoint};

/// What a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Training records D.
    Data,
    /// Non-embedding parameters P.
    Params,
    /// Training FLOPs C, read off the runs' validation points.
    Compute,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Data => "data",
            Axis::Params => "params",
            Axis::Compute => "compute",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Axis::Data => "D",
            Axis::Params => "P",
            Axis::Compute => "C",
        }
    }
}

/// How repetitions of a cell are seeded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every repetition uses the base seed.
    Fixed,
    /// Repetition r uses base seed + r.
    #[default]
    Increment,
}

/// Where the sweep's record pool comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        n_materials: usize,
        min_atoms: usize,
        max_atoms: usize,
        seed: u64,
        #[serde(default)]
        params: SyntheticParams,
    },
    Jsonl {
        path: PathBuf,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Vec<MaterialRecord>> {
        match self {
            DatasetSource::Synthetic {
                n_materials,
                min_atoms,
                max_atoms,
                seed,
                params,
            } => generate_synthetic(*n_materials, (*min_atoms, *max_atoms), *seed, params),
            DatasetSource::Jsonl { path } => load_jsonl(path),
        }
    }
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn yes() -> bool {
    true
}

/// A sweep manifest.
///
/// Every run validates on the same held-out `val_size` records. Training
/// subsets are nested: the run with D records sees the first D of one fixed
/// shuffle of the remaining pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub dataset: DatasetSource,
    pub val_size: usize,
    #[serde(default)]
    pub split_seed: u64,
    /// Training-set sizes; a single value unless the axis is data.
    pub data_sizes: Vec<usize>,
    /// Model grid; a single config for the data axis.
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    /// Cells trained concurrently.
    #[serde(default = "one")]
    pub parallelism: usize,
    /// Validation events dropped from each run before compute fits.
    #[serde(default = "two")]
    pub burn_in: usize,
    /// Run ids marked anomalous.
    #[serde(default)]
    pub flagged: Vec<String>,
    #[serde(default = "yes")]
    pub exclude_flagged: bool,
}

impl SweepSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("sweep manifest {}: {e}", path.display())))
    }

    /// Parameter counts of the model grid, in order.
    pub fn param_counts(&self) -> Result<Vec<usize>> {
        self.models
            .iter()
            .map(|m| Ok(count_params(&Model::new(m.clone(), 0)?, false)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.repetitions == 0 || self.parallelism == 0 {
            return Err(Error::config(
                "repetitions and parallelism must be at least 1",
            ));
        }
        if self.val_size == 0 {
            return Err(Error::config("val_size must be at least 1"));
        }
        if self.data_sizes.is_empty() || self.models.is_empty() {
            return Err(Error::config("data_sizes and models must be non-empty"));
        }
        if self.data_sizes.contains(&0) {
            return Err(Error::config("data sizes must be at least 1"));
        }
        if let Some(m) = self
            .models
            .iter()
            .find(|m| matches!(m.kind, ModelKind::Baseline(_)))
        {
            return Err(Error::config(format!(
                "baseline {:?} cannot be swept",
                m.kind
            )));
        }
        for m in &self.models {
            m.validate()?;
        }
        let increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.data_sizes) {
            return Err(Error::config(format!(
                "data grid {:?} is not strictly increasing",
                self.data_sizes
            )));
        }
        let counts = self.param_counts()?;
        if !increasing(&counts) {
            return Err(Error::config(format!(
                "model grid parameter counts {counts:?} are not strictly increasing"
            )));
        }
        match self.axis {
            Axis::Data if self.models.len() != 1 => {
                Err(Error::config("a data sweep fixes exactly one model"))
            }
            Axis::Data if self.data_sizes.len() < 3 => {
                Err(Error::config("a data sweep needs at least 3 grid points"))
            }
            Axis::Params if self.data_sizes.len() != 1 => Err(Error::config(
                "a parameter sweep fixes exactly one data size",
            )),
            Axis::Params if self.models.len() < 3 => Err(Error::config(
                "a parameter sweep needs at least 3 grid points",
            )),
            _ => Ok(()),
        }
    }

    fn seed_for(&self, rep: usize) -> u64 {
        match self.seed_policy {
            SeedPolicy::Fixed => self.train.seed,
            SeedPolicy::Increment => self.train.seed + rep as u64,
        }
    }
}

/// One finished (or failed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    /// D, P, or P again for compute sweeps.
    pub axis_value: u64,
    pub seed: u64,
    pub record: RunRecord,
}

impl SweepRun {
    pub fn file_name(&self, axis: Axis) -> String {
        format!("run_{}_{}_{}.csv", axis.name(), self.axis_value, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub runs: Vec<SweepRun>,
}

struct Cell {
    model: usize,
    data_size: usize,
    seed: u64,
    axis_value: u64,
}

/// Train every grid cell (times repetitions). Failed runs are kept with
/// their failure reason and the sweep carries on.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let pool = spec.dataset.load()?;
    let max_d = *spec.data_sizes.last().expect("validated non-empty");
    if pool.len() < spec.val_size + max_d {
        return Err(Error::config(format!(
            "dataset has {} records; the sweep needs {} validation plus {max_d} training",
            pool.len(),
            spec.val_size
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.split_seed));
    let val: Vec<MaterialRecord> = order[..spec.val_size]
        .iter()
        .map(|&i| pool[i].clone())
        .collect();
    let train_pool = &order[spec.val_size..];

    let counts = spec.param_counts()?;
    let mut cells = Vec::new();
    for (m, &p) in counts.iter().enumerate() {
        for &d in &spec.data_sizes {
            for rep in 0..spec.repetitions {
                let axis_value = match spec.axis {
                    Axis::Data => d as u64,
                    Axis::Params | Axis::Compute => p as u64,
                };
                cells.push(Cell {
                    model: m,
                    data_size: d,
                    seed: spec.seed_for(rep),
                    axis_value,
                });
            }
        }
    }
    info!("sweep over {}: {} runs", spec.axis.name(), cells.len());

    let run_cell = |cell: &Cell| -> SweepRun {
        let split = DatasetSplit::from_parts(
            train_pool[..cell.data_size]
                .iter()
                .map(|&i| pool[i].clone())
                .collect(),
            val.clone(),
            "sweep",
        );
        let run_id = format!("{}_{}_{}", spec.axis.name(), cell.axis_value, cell.seed);
        let cfg = TrainConfig {
            seed: cell.seed,
            run_id: run_id.clone(),
            out_dir: None,
            ..spec.train.clone()
        };
        let model_cfg = spec.models[cell.model].clone();
        let outcome = Model::new(model_cfg.clone(), cell.seed)
            .and_then(|mut model| train(&mut model, &split, &cfg));
        let mut record = match outcome {
            Ok((record, _)) => record,
            Err(e) => {
                warn!("run {run_id} failed: {e}");
                let mut r =
                    RunRecord::new(&run_id, model_cfg, cfg, String::new(), 0, cell.data_size);
                r.params = counts[cell.model];
                r.failure = Some(e.to_string());
                r
            }
        };
        record.flagged = spec.flagged.contains(&run_id);
        SweepRun {
            axis_value: cell.axis_value,
            seed: cell.seed,
            record,
        }
    };

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepRun>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..spec.parallelism.min(cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let run = run_cell(cell);
                slots
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(run);
            });
        }
    });
    let runs = slots
        .into_inner()
        .expect("lock not poisoned")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    Ok(SweepResult {
        spec: spec.clone(),
        runs,
    })
}

impl SweepResult {
    /// Write one CSV per run and `sweep.json` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for run in &self.runs {
            run.record
                .save_csv(dir.join(run.file_name(self.spec.axis)))?;
        }
        let path = dir.join("sweep.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("sweep.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Runs usable for fitting, and why the others were dropped.
    pub fn usable(&self) -> (Vec<&SweepRun>, Vec<String>) {
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for run in &self.runs {
            let id = &run.record.run_id;
            if let Some(f) = &run.record.failure {
                dropped.push(format!("{id}: failed ({f})"));
            } else if run.record.flagged && self.spec.exclude_flagged {
                dropped.push(format!("{id}: flagged anomalous"));
            } else if run.record.best_val().is_none() {
                dropped.push(format!("{id}: no validation loss"));
            } else {
                keep.push(run);
            }
        }
        (keep, dropped)
    }

    /// `(axis value, median best validation loss)` over repetitions.
    pub fn median_points(&self) -> (Vec<(f64, f64)>, Vec<String>) {
        let (runs, dropped) = self.usable();
        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in runs {
            groups
                .entry(r.axis_value)
                .or_default()
                .push(r.record.best_val().expect("usable runs validated"));
        }
        let points = groups
            .into_iter()
            .map(|(x, v)| (x as f64, median(v)))
            .collect();
        (points, dropped)
    }

    /// The power law along the sweep's axis: medians of best validation
    /// loss for data and parameter sweeps, the compute frontier otherwise.
    pub fn axis_fit(&self) -> Result<PowerLawFit> {
        match self.spec.axis {
            Axis::Compute => self.compute_fit(),
            axis => {
                let (points, exclusions) = self.median_points();
                let mut fit = fit_power_law(&points)?;
                fit.axis = axis.symbol().into();
                fit.loss = "median over repetitions of best validation total loss".into();
                fit.exclusions = exclusions;
                Ok(fit)
            }
        }
    }

    /// Frontier fit over all usable runs of the sweep.
    pub fn compute_fit(&self) -> Result<PowerLawFit> {
        let (runs, exclusions) = self.usable();
        let records: Vec<RunRecord> = runs.into_iter().map(|r| r.record.clone()).collect();
        let mut fit = frontier_fit(&records, self.spec.burn_in)?;
        fit.exclusions = exclusions;
        Ok(fit)
    }

    /// Every fit this sweep supports: the axis fit, plus the compute
    /// frontier when a data or parameter sweep has enough points for one.
    pub fn fits(&self) -> Result<Vec<PowerLawFit>> {
        let mut fits = vec![self.axis_fit()?];
        if self.spec.axis != Axis::Compute {
            match self.compute_fit() {
                Ok(f) => fits.push(f),
                Err(e) => info!("no compute frontier fit: {e}"),
            }
        }
        Ok(fits)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pareto frontier of `(C, validation loss)` over all runs, after dropping
/// each run's first `burn_in` validation events, fitted as a power law.
pub fn frontier_fit(records: &[RunRecord], burn_in: usize) -> Result<PowerLawFit> {
    let frontier = compute_frontier(records, burn_in);
    if frontier.len() < 3 {
        return Err(Error::contract(format!(
            "compute fit needs 3 frontier points, {} survive a burn-in of {burn_in}",
            frontier.len()
        )));
    }
    let points: Vec<(f64, f64)> = frontier.iter().map(|p| (p.flops, p.loss)).collect();
    let mut fit = fit_power_law(&points)?;
    fit.axis = "C".into();
    fit.loss = format!("validation total loss on the compute frontier, burn-in {burn_in}");
    Ok(fit)
}

/// Frontier points of all runs, burn-in applied.
pub fn compute_frontier(records: &[RunRecord], burn_in: usize) -> Vec<FrontierPoint> {
    let all: Vec<FrontierPoint> = records
        .iter()
        .flat_map(|r| {
            r.val_points()
                .into_iter()
                .skip(burn_in)
                .filter(|p| p.0 > 0)
                .map(|(c, l, step)| FrontierPoint {
                    flops: c as f64,
                    loss: l,
                    run_id: r.run_id.clone(),
                    step,
                })
        })
        .collect();
    pareto_points(&all)
}

/// Read `sweep.json` from `dir`, write `fits.json` and log-log plots with
/// companion CSVs. Rerunning rewrites identical files.
pub fn fit_directory(dir: impl AsRef<Path>) -> Result<Vec<PowerLawFit>> {
    let dir = dir.as_ref();
    let result = SweepResult::load(dir)?;
    let fits = result.fits()?;
    let path = dir.join("fits.json");
    let json = serde_json::to_string_pretty(&serde_json::json!({ "fits": fits }))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    for fit in &fits {
        let curves = if fit.axis == "C" {
            let usable: Vec<&SweepRun> = result.usable().0;
            let mut curves: Vec<Curve> = usable
                .iter()
                .map(|r| {
                    let pts = r
                        .record
                        .val_points()
                        .iter()
                        .filter(|p| p.0 > 0)
                        .map(|p| (p.0 as f64, p.1))
                        .collect();
                    Curve::new(r.record.run_id.clone(), pts)
                })
                .filter(|c| !c.points.is_empty())
                .collect();
            curves.push(Curve::new("frontier", fit.points.clone()));
            curves
        } else {
            vec![Curve::new(
                format!("median best validation loss vs {}", fit.axis),
                fit.points.clone(),
            )]
        };
        let stem = format!("loss_vs_{}", fit.axis);
        let svg = emit_loglog_plot(&curves, fit.axis.as_str(), "validation loss", Some(fit))?;
        for (name, body) in [
            (format!("{stem}.svg"), svg),
            (format!("{stem}.csv"), loglog_csv(&curves)?),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(fits)
}
