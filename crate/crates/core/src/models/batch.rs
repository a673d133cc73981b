//! Zero-padded batches of structures laid out as `[B·n_max, ·]` rows.

use crate::data::MaterialRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive attention bias for padded keys.
pub(crate) const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Batch<'a> {
    records: Vec<&'a MaterialRecord>,
    n_max: usize,
}

impl<'a> Batch<'a> {
    pub fn new(records: impl IntoIterator<Item = &'a MaterialRecord>) -> Result<Self> {
        let records: Vec<_> = records.into_iter().collect();
        if records.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let n_max = records.iter().map(|r| r.n_atoms()).max().unwrap_or(0);
        if n_max == 0 {
            return Err(Error::contract("batch has no atoms"));
        }
        Ok(Self { records, n_max })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn records(&self) -> &[&'a MaterialRecord] {
        &self.records
    }

    pub fn rows(&self) -> usize {
        self.records.len() * self.n_max
    }

    /// Per-atom 3-vectors, padded rows zero.
    pub fn padded(&self, field: impl Fn(&MaterialRecord) -> &[[f64; 3]]) -> Tensor {
        let mut data = vec![0.0; self.rows() * 3];
        for (b, r) in self.records.iter().enumerate() {
            for (i, v) in field(r).iter().enumerate() {
                let at = (b * self.n_max + i) * 3;
                data[at..at + 3].copy_from_slice(v);
            }
        }
        Tensor::new(vec![self.rows(), 3], data).expect("padded shape")
    }

    /// Element-table row per atom (`Z − 1`), row 0 for padding.
    pub fn element_rows(&self) -> Vec<usize> {
        let mut rows = vec![0; self.rows()];
        for (b, r) in self.records.iter().enumerate() {
            for (i, &z) in r.atomic_numbers.iter().enumerate() {
                rows[b * self.n_max + i] = z as usize - 1;
            }
        }
        rows
    }

    /// `[B, B·n_max]` averaging operator over each structure's real atoms.
    pub fn mean_pool(&self) -> Tensor {
        let rows = self.rows();
        let mut data = vec![0.0; self.len() * rows];
        for (b, r) in self.records.iter().enumerate() {
            let w = 1.0 / r.n_atoms() as f64;
            for i in 0..r.n_atoms() {
                data[b * rows + b * self.n_max + i] = w;
            }
        }
        Tensor::new(vec![self.len(), rows], data).expect("pool shape")
    }

    /// `[B, 1, 1, n_max]` additive bias hiding padded keys.
    pub fn key_mask(&self) -> Tensor {
        let mut data = vec![0.0; self.rows()];
        for (b, r) in self.records.iter().enumerate() {
            data[b * self.n_max + r.n_atoms()..(b + 1) * self.n_max].fill(MASKED);
        }
        Tensor::new(vec![self.len(), 1, 1, self.n_max], data).expect("mask shape")
    }

    /// `[B·n_max, 1]`: `1/(3·n_atoms)` on real atom rows, 0 on padding.
    pub fn force_weights(&self) -> Tensor {
        let mut data = vec![0.0; self.rows()];
        for (b, r) in self.records.iter().enumerate() {
            let w = 1.0 / (3 * r.n_atoms()) as f64;
            data[b * self.n_max..b * self.n_max + r.n_atoms()].fill(w);
        }
        Tensor::new(vec![self.rows(), 1], data).expect("weight shape")
    }
}
