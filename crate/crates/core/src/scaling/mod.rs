//! Sweeps over data, parameters and compute, Pareto frontiers and
//! power-law fits `L = alpha · N^(−beta)`.

mod fit;
mod pareto;
mod sweep;

pub use fit::{fit_power_law, PowerLawFit};
pub use pareto::{frontier_indices, pareto_frontier, pareto_points, FrontierPoint};
pub use sweep::{
    compute_frontier, fit_directory, frontier_fit, run_sweep, Axis, DatasetSource, SeedPolicy,
    SweepResult, SweepRun, SweepSpec,
};
