use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::record::MaterialRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub source: String,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

/// Disjoint training and validation subsets. `train.len()` is the data
/// axis D of a scaling run.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<MaterialRecord>,
    pub val: Vec<MaterialRecord>,
    pub meta: SplitMeta,
}

impl DatasetSplit {
    pub fn from_parts(train: Vec<MaterialRecord>, val: Vec<MaterialRecord>, source: &str) -> Self {
        let n = (train.len() + val.len()).max(1) as f64;
        Self {
            meta: SplitMeta {
                source: source.to_string(),
                seed: 0,
                train_fraction: train.len() as f64 / n,
                val_fraction: val.len() as f64 / n,
            },
            train,
            val,
        }
    }

    pub fn dataset_size(&self) -> usize {
        self.train.len()
    }
}

/// `(train, val)` sizes for `n` records: each fraction times `n`, rounded
/// half away from zero. Validation is clipped so the two never overlap.
pub fn split_sizes(n: usize, train_fraction: f64, val_fraction: f64) -> Result<(usize, usize)> {
    let in_range = |f: f64| f > 0.0 && f <= 1.0;
    if !in_range(train_fraction) {
        return Err(Error::contract(format!(
            "train fraction {train_fraction} outside (0, 1]"
        )));
    }
    if !in_range(val_fraction) {
        return Err(Error::contract(format!(
            "val fraction {val_fraction} outside (0, 1]"
        )));
    }
    if train_fraction + val_fraction > 1.0 + 1e-12 {
        return Err(Error::contract(format!(
            "train fraction {train_fraction} + val fraction {val_fraction} exceeds 1"
        )));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let n_val = ((val_fraction * n as f64).round() as usize).min(n - n_train);
    Ok((n_train, n_val))
}

/// Shuffled index partition: `(train_indices, val_indices)`.
pub fn split_indices(
    n: usize,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (n_train, n_val) = split_sizes(n, train_fraction, val_fraction)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx[n_train..n_train + n_val].to_vec();
    idx.truncate(n_train);
    Ok((idx, val))
}

pub fn split(
    records: &[MaterialRecord],
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let (ti, vi) = split_indices(records.len(), train_fraction, val_fraction, seed)?;
    Ok(DatasetSplit {
        train: ti.iter().map(|&i| records[i].clone()).collect(),
        val: vi.iter().map(|&i| records[i].clone()).collect(),
        meta: SplitMeta {
            source: "memory".into(),
            seed,
            train_fraction,
            val_fraction,
        },
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn one_million_at_ten_percent() {
        let (t, v) = split_sizes(1_000_000, 0.1, 0.05).unwrap();
        assert_eq!(t, 100_000);
        assert_eq!(v, 50_000);
        let (ti, vi) = split_indices(1_000_000, 0.1, 0.05, 1).unwrap();
        assert_eq!(ti.len(), 100_000);
        assert_eq!(vi.len(), 50_000);
    }

    #[test]
    fn rounding_half_away_from_zero() {
        assert_eq!(split_sizes(5, 0.5, 0.5).unwrap(), (3, 2));
        assert_eq!(split_sizes(3, 0.5, 0.1).unwrap(), (2, 0));
        assert!(split_sizes(10, 0.5, 0.0).is_err());
    }

    #[test]
    fn ten_records_disjoint_and_reproducible() {
        let (t, v) = split_indices(10, 0.8, 0.2, 42).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let ts: HashSet<_> = t.iter().collect();
        assert!(v.iter().all(|i| !ts.contains(i)));
        assert_eq!(split_indices(10, 0.8, 0.2, 42).unwrap(), (t, v));
    }

    #[test]
    fn fractions_validated() {
        assert!(split_sizes(10, 0.0, 0.1).is_err());
        assert!(split_sizes(10, 1.5, 0.1).is_err());
        assert!(split_sizes(10, 0.8, 0.3).is_err());
        assert!(split_sizes(10, 0.8, -0.1).is_err());
    }
}
