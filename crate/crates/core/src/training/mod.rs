//! Optimization loop, schedule, checkpoints, inference and data-parallel
//! training.

mod checkpoint;
mod config;
mod infer;
mod optim;
mod parallel;
mod record;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use infer::{infer, infer_file};
pub use optim::{clip_gradients, global_norm, Adam};
pub use parallel::DataParallel;
pub use record::{RunRecord, StepLog, CSV_HEADER};
pub use schedule::{lr_at_step, warmup_steps, FINAL_FRACTION, INITIAL_FRACTION, WARMUP_FRACTION};
pub use trainer::{
    compute_gradients, evaluate, train, train_data_parallel, train_from_source, StepGradients,
};

#[cfg(test)]
mod tests;
