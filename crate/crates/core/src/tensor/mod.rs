//! Dense tensors, reverse-mode differentiation and FLOP accounting.

mod flops;
mod graph;
mod kernels;
#[allow(clippy::module_inception)]
mod tensor;

pub use flops::{matmul_flops, FlopCounter, OpClass};
pub use graph::{BinaryOp, ElementwiseOp, Gradients, Graph, Precision, UnaryOp, Var};
pub use tensor::Tensor;
