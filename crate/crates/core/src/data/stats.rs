use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::record::MaterialRecord;

/// Voigt ordering used for stress channels: xx, yy, zz, yz, xz, xy.
pub const VOIGT: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl ChannelStats {
    fn from_values(values: impl Iterator<Item = f64> + Clone) -> Self {
        let (sum, count) = values
            .clone()
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        let mean = sum / count as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        Self {
            mean,
            std: var.sqrt(),
            count,
        }
    }
}

/// Per-channel population statistics of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub energy: ChannelStats,
    /// x, y, z force components over all atoms.
    pub force: [ChannelStats; 3],
    /// Stress components in [`VOIGT`] order.
    pub stress: [ChannelStats; 6],
}

impl SummaryStats {
    /// Mean stress as a symmetric matrix.
    pub fn mean_stress(&self) -> [[f64; 3]; 3] {
        let mut s = [[0.0; 3]; 3];
        for (k, &(i, j)) in VOIGT.iter().enumerate() {
            s[i][j] = self.stress[k].mean;
            s[j][i] = self.stress[k].mean;
        }
        s
    }
}

pub fn summary_stats(records: &[MaterialRecord]) -> Result<SummaryStats> {
    if records.is_empty() {
        return Err(Error::contract(
            "summary statistics need at least one record",
        ));
    }
    let energy = ChannelStats::from_values(records.iter().map(|r| r.energy));
    let force = std::array::from_fn(|k| {
        ChannelStats::from_values(
            records
                .iter()
                .flat_map(move |r| r.forces.iter().map(move |f| f[k])),
        )
    });
    let stress = std::array::from_fn(|k| {
        let (i, j) = VOIGT[k];
        ChannelStats::from_values(records.iter().map(move |r| r.stress[i][j]))
    });
    Ok(SummaryStats {
        energy,
        force,
        stress,
    })
}
