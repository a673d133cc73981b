use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplit, InMemory, MaterialRecord, RecordSource};
use crate::error::{Error, Result};
use crate::loss::{batch_loss, graph_loss, LossBreakdown, LossWeights};
use crate::models::{count_params, Batch, Model};
use crate::tensor::{Graph, Tensor};
use crate::viz::render_material_panel;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::optim::{clip_gradients, Adam};
use super::parallel::DataParallel;
use super::record::{RunRecord, StepLog};
use super::schedule::lr_at_step;

/// Gradients of the mean loss over one (sub-)batch.
#[derive(Clone, Debug)]
pub struct StepGradients {
    /// One tensor per parameter, in declaration order.
    pub grads: Vec<Tensor>,
    pub loss: LossBreakdown,
    /// Forward plus backward FLOPs of this computation.
    pub flops: u64,
    /// Records in the batch.
    pub n: usize,
}

impl StepGradients {
    /// Record-weighted combination of partial results, summed in the order
    /// given. Equals the full-batch gradient of the mean loss.
    pub fn combine(parts: Vec<StepGradients>, weights: &LossWeights) -> Result<StepGradients> {
        let n: usize = parts.iter().map(|p| p.n).sum();
        let Some(first) = parts.first() else {
            return Err(Error::contract("no gradients to combine"));
        };
        let mut grads: Vec<Tensor> = first
            .grads
            .iter()
            .map(|g| Tensor::zeros(g.shape()))
            .collect();
        let mut terms = [0.0; 4];
        let mut total = 0.0;
        let mut flops = 0;
        for p in &parts {
            let w = p.n as f64 / n as f64;
            for (acc, g) in grads.iter_mut().zip(&p.grads) {
                acc.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, x)| *a += w * x);
            }
            for (t, x) in terms.iter_mut().zip(p.loss.terms()) {
                *t += w * x;
            }
            total += w * p.loss.total;
            flops += p.flops;
        }
        let mut loss = LossBreakdown::from_terms(terms, weights);
        loss.total = total;
        Ok(StepGradients {
            grads,
            loss,
            flops,
            n,
        })
    }

    fn all_finite(&self) -> bool {
        self.loss.total.is_finite()
            && self
                .grads
                .iter()
                .all(|g| g.data().iter().all(|x| x.is_finite()))
    }
}

/// Loss and parameter gradients of `model` on `records`.
pub fn compute_gradients(
    model: &Model,
    records: &[&MaterialRecord],
    cfg: &TrainConfig,
) -> Result<StepGradients> {
    let batch = Batch::new(records.iter().copied())?;
    let mut g = Graph::new(cfg.precision);
    let params = model.params().register(&mut g);
    // gradient forces must stay differentiable for the surrogate
    let out = model.forward(&mut g, &params, &batch, true)?;
    let loss = graph_loss(&mut g, &out, &batch, &cfg.loss_weights, cfg.energy_mode)?;
    let breakdown = loss.breakdown(&g, &cfg.loss_weights);
    let mut grads = g.backward(loss.total)?;
    let grads = params
        .iter()
        .zip(model.params().iter())
        .map(|(&v, p)| {
            grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
        })
        .collect();
    Ok(StepGradients {
        grads,
        loss: breakdown,
        flops: g.flops_report().total(),
        n: records.len(),
    })
}

/// Mean combined loss over `records`, without gradients.
pub fn evaluate(
    model: &Model,
    records: &[MaterialRecord],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if records.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty set"));
    }
    let mut preds = Vec::with_capacity(records.len());
    for chunk in records.chunks(cfg.batch_size.max(1)) {
        preds.extend(model.predict_batch(chunk, cfg.precision)?);
    }
    batch_loss(&preds, records, &cfg.loss_weights, cfg.energy_mode)
}

/// Where a step's gradients come from.
pub(crate) enum Backend {
    Serial,
    Parallel(DataParallel),
}

impl Backend {
    fn gradients(
        &mut self,
        model: &Model,
        records: &Arc<Vec<MaterialRecord>>,
        idx: &[usize],
        cfg: &TrainConfig,
    ) -> Result<StepGradients> {
        match self {
            Backend::Serial => {
                let batch: Vec<&MaterialRecord> = idx.iter().map(|&i| &records[i]).collect();
                compute_gradients(model, &batch, cfg)
            }
            Backend::Parallel(dp) => dp.gradients(records, idx),
        }
    }

    fn apply(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        match self {
            Backend::Serial => Ok(()),
            Backend::Parallel(dp) => dp.apply(Arc::new(grads.to_vec()), lr),
        }
    }

    fn verify(&mut self, model: &Model) -> Result<()> {
        match self {
            Backend::Serial => Ok(()),
            Backend::Parallel(dp) => dp.verify_replicas(model.params()),
        }
    }
}

fn write_panel(model: &Model, sample: &MaterialRecord, dir: &Path, epoch: usize) -> Result<()> {
    let pred = model.predict(sample)?;
    let path = dir.join(format!("viz_epoch{epoch}.svg"));
    std::fs::write(&path, render_material_panel(sample, &pred)?).map_err(|e| Error::io(&path, e))
}

/// Train `model` in place on `split`. Uses data-parallel workers when
/// `cfg.workers > 1`.
pub fn train(
    model: &mut Model,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(RunRecord, Checkpoint)> {
    let mut source = InMemory::new(split.train.clone());
    train_from_source(model, &mut source, &split.val, cfg)
}

/// [`train`] pulling each epoch's training records from `source`.
pub fn train_from_source(
    model: &mut Model,
    source: &mut dyn RecordSource,
    val: &[MaterialRecord],
    cfg: &TrainConfig,
) -> Result<(RunRecord, Checkpoint)> {
    cfg.validate()?;
    let backend = if cfg.workers > 1 {
        Backend::Parallel(DataParallel::spawn(model, cfg)?)
    } else {
        Backend::Serial
    };
    run(model, source, val, cfg, backend)
}

/// Train with `cfg.workers` (at least 2) in-process data-parallel workers.
pub fn train_data_parallel(
    model: &mut Model,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(RunRecord, Checkpoint)> {
    if cfg.workers < 2 {
        return Err(Error::config(format!(
            "data-parallel training needs at least 2 workers, got {}",
            cfg.workers
        )));
    }
    train(model, split, cfg)
}

fn run(
    model: &mut Model,
    source: &mut dyn RecordSource,
    val: &[MaterialRecord],
    cfg: &TrainConfig,
    mut backend: Backend,
) -> Result<(RunRecord, Checkpoint)> {
    if !model.is_trainable() {
        return Err(Error::config("baseline models have no parameters to train"));
    }
    let d = source.len();
    if d == 0 {
        return Err(Error::contract("training split is empty"));
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let steps_per_epoch = d.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut adam = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut record = RunRecord::new(
        &cfg.run_id,
        model.config().clone(),
        cfg.clone(),
        adam.describe(),
        count_params(model, false),
        d,
    );
    info!(
        "{}: P = {}, D = {d}, {total_steps} steps over {} epochs",
        cfg.run_id, record.params, cfg.epochs
    );

    let started = Instant::now();
    let mut step = 0;
    let mut flops = 0u64;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut completed = 0;
    for epoch in 1..=cfg.epochs {
        let epoch_start = Instant::now();
        let records = source.load_epoch()?;
        if records.len() != d {
            return Err(Error::State(format!(
                "epoch {epoch} yielded {} records, expected {d}",
                records.len()
            )));
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let mut sg = backend.gradients(model, &records, idx, cfg)?;
            if !sg.all_finite() {
                let diagnostic = Checkpoint::capture(model, &adam, &record, &rng, step, epoch - 1);
                warn!(
                    "{}: non-finite loss or gradient at step {}",
                    cfg.run_id,
                    step + 1
                );
                return Err(Error::NonFiniteLoss {
                    step: step + 1,
                    diagnostic: Box::new(diagnostic),
                });
            }
            clip_gradients(&mut sg.grads, cfg.grad_clip);
            let lr = lr_at_step(step, total_steps, cfg.max_lr)?;
            adam.step(model.params_mut(), &sg.grads, lr)?;
            backend.apply(&sg.grads, lr)?;
            step += 1;
            flops += sg.flops;
            record.steps.push(StepLog {
                step,
                epoch,
                flops,
                lr,
                train: sg.loss,
                val: None,
            });
        }
        backend.verify(model)?;
        record
            .epoch_times_s
            .push(epoch_start.elapsed().as_secs_f64());
        completed = epoch;

        let mut stop = false;
        if (epoch % cfg.val_period_epochs == 0 || epoch == cfg.epochs) && !val.is_empty() {
            let v = evaluate(model, val, cfg)?;
            debug!("{}: epoch {epoch} val {:.6}", cfg.run_id, v.total);
            if let Some(last) = record.steps.last_mut() {
                last.val = Some(v);
            }
            if let Some(dir) = &cfg.out_dir {
                Checkpoint::capture(model, &adam, &record, &rng, step, epoch)
                    .save(dir.join(format!("checkpoint_epoch{epoch}.ckpt")))?;
            }
            if v.total < best {
                best = v.total;
                stale = 0;
            } else {
                stale += 1;
                if cfg.early_stop_patience.is_some_and(|p| stale >= p) {
                    info!("{}: early stop at epoch {epoch}", cfg.run_id);
                    record.stopped_early = true;
                    stop = true;
                }
            }
        }
        if epoch % cfg.viz_period_epochs == 0 {
            if let Some(dir) = &cfg.out_dir {
                let sample = val.first().unwrap_or(&records[0]);
                write_panel(model, sample, dir, epoch)?;
            }
        }
        if stop {
            break;
        }
    }
    record.wall_time_s = started.elapsed().as_secs_f64();
    let ckpt = Checkpoint::capture(model, &adam, &record, &rng, step, completed);
    if let Some(dir) = &cfg.out_dir {
        ckpt.save(dir.join("checkpoint_final.ckpt"))?;
    }
    Ok((record, ckpt))
}
