//! Floating-point operation accounting.
//!
//! Convention: matmul costs `2·m·n·k`; every elementwise primitive and
//! reduction costs 1 per element; softmax costs 4 per element; layernorm
//! costs 8 per element. Gathers, slices, concatenation, reshapes and
//! transposes are pure data movement and cost nothing. Backward passes are
//! recorded as ordinary graph operations and therefore priced by the same
//! rules.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Matmul,
    Elementwise,
    Reduction,
    Softmax,
    Layernorm,
    Scatter,
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpClass::Matmul => "matmul",
            OpClass::Elementwise => "elementwise",
            OpClass::Reduction => "reduction",
            OpClass::Softmax => "softmax",
            OpClass::Layernorm => "layernorm",
            OpClass::Scatter => "scatter",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    total: u64,
    per_op_class: BTreeMap<OpClass, u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, class: OpClass, flops: u64) {
        if flops == 0 {
            return;
        }
        self.total += flops;
        *self.per_op_class.entry(class).or_insert(0) += flops;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, class: OpClass) -> u64 {
        self.per_op_class.get(&class).copied().unwrap_or(0)
    }

    pub fn per_op_class(&self) -> &BTreeMap<OpClass, u64> {
        &self.per_op_class
    }

    pub fn reset(&mut self) {
        self.total = 0;
        self.per_op_class.clear();
    }
}

impl AddAssign<&FlopCounter> for FlopCounter {
    fn add_assign(&mut self, rhs: &FlopCounter) {
        for (&class, &n) in &rhs.per_op_class {
            self.record(class, n);
        }
    }
}

pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 4;
pub const LAYERNORM_FLOPS_PER_ELEMENT: u64 = 8;

pub fn matmul_flops(m: usize, n: usize, k: usize) -> u64 {
    2 * (m as u64) * (n as u64) * (k as u64)
}
