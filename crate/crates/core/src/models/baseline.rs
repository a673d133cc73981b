use crate::data::{MaterialRecord, SummaryStats};

use super::config::BaselineMode;
use super::EFSPrediction;

/// Constant prediction that ignores atomic positions.
pub fn baseline_predict(
    mode: BaselineMode,
    stats: &SummaryStats,
    material: &MaterialRecord,
) -> EFSPrediction {
    let n = material.n_atoms();
    match mode {
        BaselineMode::AllZero => EFSPrediction::zeros(n),
        BaselineMode::MeanEnergyZeroForce => EFSPrediction {
            energy: stats.energy.mean,
            forces: vec![[0.0; 3]; n],
            stress: stats.mean_stress(),
        },
    }
}
