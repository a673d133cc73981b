//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::data::{
    generate_synthetic, jsonl, load_jsonl, save_jsonl, split_indices, summary_stats, JsonlDataset,
    MaterialRecord, RecordSource, SyntheticParams,
};
use crate::error::{Error, Result};
use crate::loss::{batch_loss, EnergyMode, LossWeights};
use crate::models::{Model, ModelConfig, ModelKind};
use crate::scaling::{fit_directory, run_sweep, SweepSpec};
use crate::tensor::Precision;
use crate::training::{infer, train_from_source, Checkpoint, TrainConfig};
use crate::viz::render_material_panel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(
    name = "matscale",
    version,
    about = "Scaling-law laboratory for atomistic transformer potentials"
)]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Write a synthetic Lennard-Jones dataset as JSONL.
    Generate(GenerateArgs),
    /// Print per-channel statistics of a JSONL dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model on a JSONL dataset.
    Train(TrainArgs),
    /// Run a sweep manifest, writing one CSV per run and sweep.json.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Fit power laws to a finished sweep, writing fits.json and plots.
    Fit {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Predict one material with a checkpoint.
    Infer(RecordArgs),
    /// Render actual vs predicted panels for one material.
    Viz {
        #[command(flatten)]
        record: RecordArgs,
        /// SVG output path.
        #[arg(long, default_value = "panel.svg")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1000, value_parser = positive_usize)]
    pub n: usize,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub min_atoms: usize,
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    pub max_atoms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct RecordArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL file holding the material.
    #[arg(long)]
    pub data: PathBuf,
    /// Zero-based line of the material in the file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct TrainArgs {
    /// JSONL dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// transformer, surrogate, or baseline:<mean_energy_zero_force|all_zero>.
    #[arg(long, default_value = "transformer", value_parser = parse_model_kind)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4, value_parser = positive_usize)]
    pub heads: usize,
    #[arg(long, default_value_t = 128, value_parser = positive_usize)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 32, value_parser = positive_usize)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50, value_parser = positive_usize)]
    pub epochs: usize,
    #[arg(long, default_value_t = 6e-4, value_parser = positive_f64)]
    pub max_lr: f64,
    #[arg(long, default_value_t = 0.8, value_parser = fraction)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.1, value_parser = fraction)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 100.0, value_parser = positive_f64)]
    pub grad_clip: f64,
    /// Validation period in epochs.
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub val_period: usize,
    /// Visualization period in epochs.
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    pub viz_period: usize,
    /// Data-parallel workers; the batch size must divide evenly.
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    pub workers: usize,
    /// Round every computed value to 32-bit.
    #[arg(long)]
    pub mixed_precision: bool,
    /// Parse the dataset once instead of every epoch.
    #[arg(long)]
    pub cache: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub energy_weight: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub force_weight: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub iso_stress_weight: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub aniso_stress_weight: f64,
    /// Divide the energy error by the atom count.
    #[arg(long)]
    pub per_atom_energy: bool,
    /// Stop after this many validation events without improvement.
    #[arg(long, value_parser = positive_usize)]
    pub early_stop: Option<usize>,
    #[arg(long, default_value = "run")]
    pub run_id: String,
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a positive number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a non-negative number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        Ok(_) => Err("must lie in (0, 1]".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_model_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

impl TrainArgs {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            ..ModelConfig::transformer(self.d_model, self.layers, self.heads, self.d_ff)
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_lr: self.max_lr,
            grad_clip: self.grad_clip,
            val_period_epochs: self.val_period,
            viz_period_epochs: self.viz_period,
            precision: if self.mixed_precision {
                Precision::Reduced
            } else {
                Precision::High
            },
            workers: self.workers,
            cache: self.cache,
            seed: self.seed,
            loss_weights: LossWeights::new(
                self.energy_weight,
                self.force_weight,
                self.iso_stress_weight,
                self.aniso_stress_weight,
            )?,
            energy_mode: if self.per_atom_energy {
                EnergyMode::PerAtom
            } else {
                EnergyMode::PerStructure
            },
            early_stop_patience: self.early_stop,
            out_dir: Some(self.out_dir.clone()),
            run_id: self.run_id.clone(),
        };
        cfg.validate()?;
        self.model_config().validate()?;
        Ok(cfg)
    }
}

/// Parse arguments (including the program name) without exiting.
pub fn parse_args<I, T>(argv: I) -> std::result::Result<CliConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    CliConfig::try_parse_from(argv)
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Parse { .. }
        | Error::Io { .. }
        | Error::Domain(_)
        | Error::Load(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_DATA,
        Error::NonFiniteLoss { .. } | Error::Numeric(_) => EXIT_NUMERIC,
        Error::Contract(_) | Error::State(_) | Error::Dimension { .. } => EXIT_INTERNAL,
    }
}

/// Parse and execute; returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn record_at(path: &Path, index: usize) -> Result<MaterialRecord> {
    let mut all = load_jsonl(path)?;
    if index >= all.len() {
        return Err(Error::config(format!(
            "--index {index} but {} holds {} records",
            path.display(),
            all.len()
        )));
    }
    Ok(all.swap_remove(index))
}

pub fn execute(cli: &CliConfig) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => {
            let recs = generate_synthetic(
                a.n,
                (a.min_atoms, a.max_atoms),
                a.seed,
                &SyntheticParams::default(),
            )
            .map_err(|e| match e {
                Error::Contract(m) => Error::Config(m),
                e => e,
            })?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            save_jsonl(&a.out, &recs)?;
            println!("wrote {} records to {}", recs.len(), a.out.display());
        }
        Command::Stats { data } => {
            let stats = summary_stats(&load_jsonl(data)?)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train(a) => train_command(a)?,
        Command::Sweep { manifest, out_dir } => {
            let spec = SweepSpec::load(manifest)?;
            let result = run_sweep(&spec)?;
            result.save(out_dir)?;
            let failed = result
                .runs
                .iter()
                .filter(|r| r.record.failure.is_some())
                .count();
            println!(
                "{} runs ({failed} failed) written to {}",
                result.runs.len(),
                out_dir.display()
            );
        }
        Command::Fit { out_dir } => {
            for f in fit_directory(out_dir)? {
                println!(
                    "{}: alpha = {:.6e}, beta = {:.6}, r2 = {:.6} over {} points",
                    f.axis, f.alpha, f.beta, f.r_squared, f.n_points
                );
            }
        }
        Command::Infer(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let material = record_at(&a.data, a.index)?;
            let (pred, metrics) = infer(&ckpt, &material)?;
            let out = serde_json::json!({ "prediction": pred, "errors": metrics });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Viz { record, out } => {
            let model = Checkpoint::load(&record.checkpoint)?.to_model()?;
            let material = record_at(&record.data, record.index)?;
            let pred = model.predict(&material)?;
            write(out, render_material_panel(&material, &pred)?)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn train_command(a: &TrainArgs) -> Result<()> {
    let cfg = a.train_config()?;
    let n = jsonl::count_records(&a.data)?;
    let (train_idx, val_idx) =
        split_indices(n, a.train_frac, a.val_frac, a.seed).map_err(|e| match e {
            Error::Contract(m) => Error::Config(m),
            e => e,
        })?;
    if train_idx.is_empty() {
        return Err(Error::config(format!(
            "--train-frac {} of {n} records leaves no training data",
            a.train_frac
        )));
    }
    let all = load_jsonl(&a.data)?;
    let val: Vec<MaterialRecord> = val_idx.iter().map(|&i| all[i].clone()).collect();
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    if let ModelKind::Baseline(mode) = a.model {
        let train: Vec<MaterialRecord> = train_idx.iter().map(|&i| all[i].clone()).collect();
        let model = Model::baseline(mode, summary_stats(&train)?);
        let eval = if val.is_empty() { &train } else { &val };
        let preds = eval
            .iter()
            .map(|r| model.predict(r))
            .collect::<Result<Vec<_>>>()?;
        let loss = batch_loss(&preds, eval, &cfg.loss_weights, cfg.energy_mode)?;
        println!("{}", serde_json::to_string_pretty(&loss)?);
        return Ok(());
    }
    drop(all);
    let mut model = Model::new(a.model_config(), a.seed)?;
    let mut source = JsonlDataset::open(&a.data, a.cache)?.select(train_idx);
    info!(
        "training on {} records, validating on {}",
        source.len(),
        val.len()
    );
    let (record, _) = train_from_source(&mut model, &mut source, &val, &cfg)?;
    record.save_csv(a.out_dir.join(format!("{}.csv", a.run_id)))?;
    write(
        &a.out_dir.join(format!("{}.json", a.run_id)),
        serde_json::to_string_pretty(&record)?,
    )?;
    println!(
        "{}: D = {}, P = {}, {} steps, final train loss {:.6}, best val {}",
        record.run_id,
        record.dataset_size,
        record.params,
        record.steps.len(),
        record.steps.last().map_or(f64::NAN, |s| s.train.total),
        record
            .best_val()
            .map_or("n/a".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}
