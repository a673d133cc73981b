//! In-process data parallelism: each worker thread owns a model replica and
//! its own graphs; the orchestrator combines sub-batch gradients in fixed
//! worker order and broadcasts the clipped result for every replica to apply.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::data::MaterialRecord;
use crate::error::{Error, Result};
use crate::models::{Model, ParamStore};
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::Adam;
use super::trainer::{compute_gradients, StepGradients};

enum Request {
    Grad {
        records: Arc<Vec<MaterialRecord>>,
        idx: Vec<usize>,
    },
    Apply {
        grads: Arc<Vec<Tensor>>,
        lr: f64,
    },
    Params,
    Stop,
}

enum Reply {
    Grad(Result<StepGradients>),
    Applied(Result<()>),
    Params(Box<ParamStore>),
}

struct Worker {
    tx: Sender<Request>,
    rx: Receiver<Reply>,
    handle: Option<JoinHandle<()>>,
}

fn worker_loop(mut model: Model, cfg: TrainConfig, rx: Receiver<Request>, tx: Sender<Reply>) {
    let mut adam = Adam::new(model.params());
    while let Ok(req) = rx.recv() {
        let reply = match req {
            Request::Grad { records, idx } => {
                let batch: Vec<&MaterialRecord> = idx.iter().map(|&i| &records[i]).collect();
                Reply::Grad(compute_gradients(&model, &batch, &cfg))
            }
            Request::Apply { grads, lr } => {
                Reply::Applied(adam.step(model.params_mut(), &grads, lr))
            }
            Request::Params => Reply::Params(Box::new(model.params().clone())),
            Request::Stop => break,
        };
        if tx.send(reply).is_err() {
            break;
        }
    }
}

/// `k` replicas of one model kept in lockstep.
pub struct DataParallel {
    workers: Vec<Worker>,
    cfg: TrainConfig,
}

/// Split `n` items into `k` contiguous near-equal ranges (larger first).
fn shard_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|w| n / k + usize::from(w < n % k)).collect()
}

impl DataParallel {
    /// Start `cfg.workers` workers, each with a clone of `model`.
    pub fn spawn(model: &Model, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.workers < 2 {
            return Err(Error::config("data parallelism needs at least 2 workers"));
        }
        let mut workers = Vec::with_capacity(cfg.workers);
        for w in 0..cfg.workers {
            let (req_tx, req_rx) = channel();
            let (rep_tx, rep_rx) = channel();
            let (replica, wcfg) = (model.clone(), cfg.clone());
            let handle = std::thread::Builder::new()
                .name(format!("dp-worker-{w}"))
                .spawn(move || worker_loop(replica, wcfg, req_rx, rep_tx))
                .map_err(|e| Error::State(format!("cannot start worker {w}: {e}")))?;
            workers.push(Worker {
                tx: req_tx,
                rx: rep_rx,
                handle: Some(handle),
            });
        }
        Ok(Self {
            workers,
            cfg: cfg.clone(),
        })
    }

    pub fn workers(&self) -> usize {
        self.workers.len()
    }

    fn send(&self, w: usize, req: Request) -> Result<()> {
        self.workers[w]
            .tx
            .send(req)
            .map_err(|_| Error::State(format!("worker {w} has stopped")))
    }

    fn recv(&self, w: usize) -> Result<Reply> {
        self.workers[w]
            .rx
            .recv()
            .map_err(|_| Error::State(format!("worker {w} has stopped")))
    }

    /// Full-batch gradients for records `idx`, computed as contiguous shards
    /// in parallel and combined in worker order.
    pub fn gradients(
        &mut self,
        records: &Arc<Vec<MaterialRecord>>,
        idx: &[usize],
    ) -> Result<StepGradients> {
        let mut busy = Vec::new();
        let mut start = 0;
        for (w, size) in shard_sizes(idx.len(), self.workers.len())
            .into_iter()
            .enumerate()
        {
            if size == 0 {
                continue;
            }
            self.send(
                w,
                Request::Grad {
                    records: Arc::clone(records),
                    idx: idx[start..start + size].to_vec(),
                },
            )?;
            busy.push(w);
            start += size;
        }
        let mut parts = Vec::with_capacity(busy.len());
        let mut first_err = None;
        for w in busy {
            match self.recv(w)? {
                Reply::Grad(Ok(sg)) => parts.push(sg),
                Reply::Grad(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                _ => return Err(Error::State(format!("worker {w} answered out of turn"))),
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        StepGradients::combine(parts, &self.cfg.loss_weights)
    }

    /// Apply one optimizer step with `grads` on every replica.
    pub fn apply(&mut self, grads: Arc<Vec<Tensor>>, lr: f64) -> Result<()> {
        for w in 0..self.workers.len() {
            self.send(
                w,
                Request::Apply {
                    grads: Arc::clone(&grads),
                    lr,
                },
            )?;
        }
        for w in 0..self.workers.len() {
            match self.recv(w)? {
                Reply::Applied(r) => r?,
                _ => return Err(Error::State(format!("worker {w} answered out of turn"))),
            }
        }
        Ok(())
    }

    /// Current parameters of every replica.
    pub fn replica_params(&mut self) -> Result<Vec<ParamStore>> {
        for w in 0..self.workers.len() {
            self.send(w, Request::Params)?;
        }
        (0..self.workers.len())
            .map(|w| match self.recv(w)? {
                Reply::Params(p) => Ok(*p),
                _ => Err(Error::State(format!("worker {w} answered out of turn"))),
            })
            .collect()
    }

    /// Fail unless every replica matches `reference` bit for bit.
    pub fn verify_replicas(&mut self, reference: &ParamStore) -> Result<()> {
        let want: Vec<u64> = reference.flatten().iter().map(|x| x.to_bits()).collect();
        for (w, p) in self.replica_params()?.iter().enumerate() {
            if p.flatten()
                .iter()
                .map(|x| x.to_bits())
                .ne(want.iter().copied())
            {
                return Err(Error::Numeric(format!(
                    "replica {w} diverged from the reference parameters"
                )));
            }
        }
        Ok(())
    }
}

impl Drop for DataParallel {
    fn drop(&mut self) {
        for w in &self.workers {
            let _ = w.tx.send(Request::Stop);
        }
        for w in &mut self.workers {
            if let Some(h) = w.handle.take() {
                let _ = h.join();
            }
        }
    }
}
