//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Backward passes are themselves emitted as graph operations, so with
//! `create_graph` the resulting gradients can be differentiated again
//! (used for energy-gradient forces). Graph nodes are appended in
//! evaluation order, which makes the node index a valid topological order.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::flops::{
    matmul_flops, FlopCounter, OpClass, LAYERNORM_FLOPS_PER_ELEMENT, SOFTMAX_FLOPS_PER_ELEMENT,
};
use super::kernels;
use super::Tensor;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Arithmetic precision for every tensor produced by one graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// 64-bit reference arithmetic.
    #[default]
    High,
    /// Every produced value is rounded to 32-bit.
    Reduced,
}

/// Handle to a node of a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    graph: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sigmoid,
    Silu,
    Sin,
    Cos,
    Square,
    Sqrt,
    Exp,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Operation kinds accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Unary(UnaryOp),
    Binary(BinaryOp),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Transpose(Var),
    Permute(Var, Rc<[usize]>),
    SumAll(Var),
    SumAxis(Var),
    Expand(Var),
    SumTo(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    Slice {
        a: Var,
        r0: usize,
        c0: usize,
    },
    Pad {
        a: Var,
        r0: usize,
        c0: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
}

/// Gradients of a scalar with respect to every requires-grad leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.map.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.map.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, v: Var) -> bool {
        self.map.contains_key(&v)
    }
}

pub struct Graph {
    id: u32,
    precision: Precision,
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    flops: FlopCounter,
    consumed: bool,
    /// While false, new nodes never require gradients (plain backward).
    track: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new(Precision::High)
    }
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            precision,
            values: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            flops: FlopCounter::new(),
            consumed: false,
            track: true,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn flops_report(&self) -> FlopCounter {
        self.flops.clone()
    }

    pub fn reset_flops(&mut self) {
        self.flops.reset();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v);
        &self.values[v.index()]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.index()]
    }

    fn check(&self, v: Var) {
        assert_eq!(v.graph, self.id, "variable used with a foreign graph");
    }

    fn push(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        if self.precision == Precision::Reduced {
            value.round_to_f32();
        }
        let requires = self.track && inputs.iter().any(|v| self.requires[v.index()]);
        let idx = self.values.len() as u32;
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        Var {
            graph: self.id,
            idx,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.requires[v.index()] = requires_grad;
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn count(&mut self, class: OpClass, n: usize) {
        self.flops.record(class, n as u64);
    }

    // ----- elementwise -----

    pub fn elementwise(&mut self, kind: ElementwiseOp, x: Var, y: Option<Var>) -> Result<Var> {
        match (kind, y) {
            (ElementwiseOp::Unary(op), None) => Ok(self.unary(op, x)),
            (ElementwiseOp::Binary(op), Some(y)) => self.binary(op, x, y),
            _ => Err(Error::contract(format!("wrong operand count for {kind:?}"))),
        }
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Var {
        self.check(x);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Neg => |v| -v,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Silu => |v| v * sigmoid(v),
            UnaryOp::Sin => f64::sin,
            UnaryOp::Cos => f64::cos,
            UnaryOp::Square => |v| v * v,
            UnaryOp::Sqrt => f64::sqrt,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Abs => f64::abs,
        };
        let out = self.values[x.index()].map(f);
        self.count(OpClass::Elementwise, out.len());
        self.push(out, Op::Unary(op, x), &[x])
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        self.check(a);
        self.check(b);
        let (ta, tb) = (&self.values[a.index()], &self.values[b.index()]);
        let out = match op {
            BinaryOp::Add => kernels::binary("add", ta, tb, |x, y| x + y)?,
            BinaryOp::Sub => kernels::binary("sub", ta, tb, |x, y| x - y)?,
            BinaryOp::Mul => kernels::binary("mul", ta, tb, |x, y| x * y)?,
            BinaryOp::Div => kernels::binary("div", ta, tb, |x, y| x / y)?,
        };
        self.count(OpClass::Elementwise, out.len());
        Ok(self.push(out, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Neg, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Silu, x)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sin, x)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Cos, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Square, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sqrt, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Abs, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.check(x);
        let out = self.values[x.index()].map(|v| v * c);
        self.count(OpClass::Elementwise, out.len());
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.check(x);
        let out = self.values[x.index()].map(|v| v + c);
        self.count(OpClass::Elementwise, out.len());
        self.push(out, Op::AddScalar(x), &[x])
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)`, transposing the last two axes of each operand when
    /// its flag is set. Rank-3 operands are multiplied batch by batch.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        self.check(a);
        self.check(b);
        let (out, (m, n, k)) =
            kernels::matmul(&self.values[a.index()], &self.values[b.index()], ta, tb)?;
        self.flops.record(OpClass::Matmul, matmul_flops(m, n, k));
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a);
        let out = kernels::transpose(&self.values[a.index()])?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// Reorder axes; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        self.check(a);
        let out = kernels::permute(&self.values[a.index()], perm)?;
        Ok(self.push(out, Op::Permute(a, perm.into()), &[a]))
    }

    // ----- reductions and broadcasting -----

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        self.check(a);
        let t = &self.values[a.index()];
        let s = t.data().iter().sum::<f64>();
        self.count(OpClass::Reduction, t.len());
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    /// Sum along `axis`, keeping the axis with size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a);
        let t = &self.values[a.index()];
        if axis >= t.rank() {
            return Err(Error::Dimension {
                op: "sum_axis",
                lhs: t.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let out = kernels::sum_axis(t, axis);
        self.count(OpClass::Reduction, t.len());
        Ok(self.push(out, Op::SumAxis(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a);
        if self.values[a.index()].shape() == shape {
            return Ok(a);
        }
        let out = kernels::expand(&self.values[a.index()], shape)?;
        Ok(self.push(out, Op::Expand(a), &[a]))
    }

    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a);
        let t = &self.values[a.index()];
        if t.shape() == shape {
            return Ok(a);
        }
        let n = t.len();
        let out = kernels::sum_to(t, shape)?;
        self.count(OpClass::Reduction, n);
        Ok(self.push(out, Op::SumTo(a), &[a]))
    }

    // ----- normalization -----

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x);
        let t = &self.values[x.index()];
        if axis >= t.rank() {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let out = kernels::softmax(t, axis);
        self.flops.record(
            OpClass::Softmax,
            SOFTMAX_FLOPS_PER_ELEMENT * out.len() as u64,
        );
        Ok(self.push(out, Op::Softmax(x, axis), &[x]))
    }

    /// Normalize over the last axis, then apply `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        self.check(x);
        if eps <= 0.0 {
            return Err(Error::contract("layernorm eps must be positive"));
        }
        let t = &self.values[x.index()];
        let d = *t
            .shape()
            .last()
            .ok_or_else(|| Error::contract("layernorm on a scalar"))?;
        let (g, b) = (&self.values[gain.index()], &self.values[bias.index()]);
        if g.len() != d || b.len() != d {
            return Err(Error::Dimension {
                op: "layernorm",
                lhs: t.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let out = kernels::layernorm(t, g.data(), b.data(), eps);
        self.flops.record(
            OpClass::Layernorm,
            LAYERNORM_FLOPS_PER_ELEMENT * out.len() as u64,
        );
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }, &[x, gain, bias]))
    }

    // ----- indexing and layout -----

    /// Select rows of a rank-2 tensor. Pure lookup, no FLOPs.
    pub fn gather_rows(&mut self, a: Var, idx: impl Into<Rc<[usize]>>) -> Result<Var> {
        self.check(a);
        let idx = idx.into();
        let out = kernels::gather_rows(&self.values[a.index()], &idx)?;
        Ok(self.push(out, Op::Gather(a, idx), &[a]))
    }

    /// Accumulate row `k` of `a` into output row `idx[k]`.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        idx: impl Into<Rc<[usize]>>,
        rows: usize,
    ) -> Result<Var> {
        self.check(a);
        let idx = idx.into();
        let out = kernels::scatter_add_rows(&self.values[a.index()], &idx, rows)?;
        self.count(OpClass::Scatter, self.values[a.index()].len());
        Ok(self.push(out, Op::ScatterAdd(a, idx), &[a]))
    }

    pub fn slice(&mut self, a: Var, r0: usize, nr: usize, c0: usize, nc: usize) -> Result<Var> {
        self.check(a);
        let out = kernels::slice2(&self.values[a.index()], r0, nr, c0, nc)?;
        Ok(self.push(out, Op::Slice { a, r0, c0 }, &[a]))
    }

    /// Embed `a` into a zero `[rows, cols]` tensor at `(r0, c0)`.
    pub fn pad(&mut self, a: Var, rows: usize, cols: usize, r0: usize, c0: usize) -> Result<Var> {
        self.check(a);
        let out = kernels::pad2(&self.values[a.index()], rows, cols, r0, c0)?;
        Ok(self.push(out, Op::Pad { a, r0, c0 }, &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        let (_, c) = self.value(first).dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            self.check(p);
            let t = &self.values[p.index()];
            let (r, pc) = t.dims2()?;
            if pc != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.values[first.index()].shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
            rows += r;
        }
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        let (r, _) = self.value(first).dims2()?;
        let mut cols = 0;
        for &p in parts {
            self.check(p);
            let (pr, pc) = self.values[p.index()].dims2()?;
            if pr != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.values[first.index()].shape().to_vec(),
                    rhs: self.values[p.index()].shape().to_vec(),
                });
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let t = &self.values[p.index()];
                let pc = t.shape()[1];
                data.extend_from_slice(&t.data()[i * pc..(i + 1) * pc]);
            }
        }
        let out = Tensor::new(vec![r, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a);
        if self.values[a.index()].shape() == shape {
            return Ok(a);
        }
        let out = self.values[a.index()].clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    // ----- differentiation -----

    /// Gradients of the scalar `loss` for every requires-grad leaf.
    ///
    /// Consumes the graph: nodes created by the backward sweep are freed and
    /// any later `backward`/`grad` call fails with a state error. Forward
    /// values stay readable.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let mark = self.values.len();
        let adj = self.sweep(loss, false)?;
        let mut map = HashMap::new();
        for i in 0..=loss.index() {
            if matches!(self.ops[i], Op::Leaf) && self.requires[i] {
                let v = Var {
                    graph: self.id,
                    idx: i as u32,
                };
                let g = match adj[i] {
                    Some(a) => self.values[a.index()].clone(),
                    None => Tensor::zeros(self.values[i].shape()),
                };
                map.insert(v, g);
            }
        }
        self.values.truncate(mark);
        self.ops.truncate(mark);
        self.requires.truncate(mark);
        self.consumed = true;
        Ok(Gradients { map })
    }

    /// Gradient of scalar `output` with respect to each of `wrt`, as new
    /// graph variables. With `create_graph` the returned variables are
    /// themselves differentiable. The graph stays usable afterwards.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let adj = self.sweep(output, create_graph)?;
        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            self.check(w);
            let g = match adj.get(w.index()).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.values[w.index()].shape());
                    self.constant(z)
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    fn sweep(&mut self, output: Var, create_graph: bool) -> Result<Vec<Option<Var>>> {
        self.check(output);
        if self.consumed {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if self.values[output.index()].len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.values[output.index()].shape()
            )));
        }
        let prev_track = self.track;
        self.track = create_graph;
        let result = self.sweep_inner(output);
        self.track = prev_track;
        result
    }

    fn sweep_inner(&mut self, output: Var) -> Result<Vec<Option<Var>>> {
        let n = output.index() + 1;
        let mut adj: Vec<Option<Var>> = vec![None; n];
        let seed = Tensor::full(self.values[output.index()].shape(), 1.0);
        adj[output.index()] = Some(self.constant(seed));
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !self.requires[i] {
                continue;
            }
            let op = self.ops[i].clone();
            let me = Var {
                graph: self.id,
                idx: i as u32,
            };
            for (input, contrib) in self.vjp(&op, me, g)? {
                if !self.requires[input.index()] {
                    continue;
                }
                adj[input.index()] = Some(match adj[input.index()] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(adj)
    }

    /// Vector-Jacobian products of one node, expressed as graph operations.
    fn vjp(&mut self, op: &Op, out: Var, g: Var) -> Result<Vec<(Var, Var)>> {
        let needs = |s: &Self, v: Var| s.requires[v.index()];
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let d = match kind {
                    UnaryOp::Neg => self.neg(g),
                    UnaryOp::Sigmoid => {
                        let ns = self.neg(out);
                        let one_minus = self.add_scalar(ns, 1.0);
                        let ds = self.mul(out, one_minus)?;
                        self.mul(g, ds)?
                    }
                    UnaryOp::Silu => {
                        // silu'(x) = s·(1 + x·(1 − s))
                        let s = self.sigmoid(x);
                        let ns = self.neg(s);
                        let one_minus = self.add_scalar(ns, 1.0);
                        let t = self.mul(x, one_minus)?;
                        let t = self.add_scalar(t, 1.0);
                        let ds = self.mul(s, t)?;
                        self.mul(g, ds)?
                    }
                    UnaryOp::Sin => {
                        let c = self.cos(x);
                        self.mul(g, c)?
                    }
                    UnaryOp::Cos => {
                        let s = self.sin(x);
                        let t = self.mul(g, s)?;
                        self.neg(t)
                    }
                    UnaryOp::Square => {
                        let two_x = self.scale(x, 2.0);
                        self.mul(g, two_x)?
                    }
                    UnaryOp::Sqrt => {
                        let two_y = self.scale(out, 2.0);
                        self.div(g, two_y)?
                    }
                    UnaryOp::Exp => self.mul(g, out)?,
                    UnaryOp::Abs => {
                        // subgradient 0 at the kink
                        let sign = self.values[x.index()].map(|v| {
                            if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        });
                        let sign = self.constant(sign);
                        self.mul(g, sign)?
                    }
                };
                res.push((x, d));
            }
            Op::Binary(kind, a, b) => {
                let sa = self.values[a.index()].shape().to_vec();
                let sb = self.values[b.index()].shape().to_vec();
                match kind {
                    BinaryOp::Add => {
                        if needs(self, a) {
                            res.push((a, self.sum_to(g, &sa)?));
                        }
                        if needs(self, b) {
                            res.push((b, self.sum_to(g, &sb)?));
                        }
                    }
                    BinaryOp::Sub => {
                        if needs(self, a) {
                            res.push((a, self.sum_to(g, &sa)?));
                        }
                        if needs(self, b) {
                            let ng = self.neg(g);
                            res.push((b, self.sum_to(ng, &sb)?));
                        }
                    }
                    BinaryOp::Mul => {
                        if needs(self, a) {
                            let t = self.mul(g, b)?;
                            res.push((a, self.sum_to(t, &sa)?));
                        }
                        if needs(self, b) {
                            let t = self.mul(g, a)?;
                            res.push((b, self.sum_to(t, &sb)?));
                        }
                    }
                    BinaryOp::Div => {
                        if needs(self, a) {
                            let t = self.div(g, b)?;
                            res.push((a, self.sum_to(t, &sa)?));
                        }
                        if needs(self, b) {
                            // d(a/b)/db = −out/b
                            let t = self.mul(g, out)?;
                            let t = self.div(t, b)?;
                            let t = self.neg(t);
                            res.push((b, self.sum_to(t, &sb)?));
                        }
                    }
                }
            }
            Op::Scale(x, c) => res.push((x, self.scale(g, c))),
            Op::AddScalar(x) => res.push((x, g)),
            Op::MatMul { a, b, ta, tb } => {
                if needs(self, a) {
                    let da = match (ta, tb) {
                        (false, false) => self.matmul_t(g, b, false, true)?,
                        (false, true) => self.matmul_t(g, b, false, false)?,
                        (true, false) => self.matmul_t(b, g, false, true)?,
                        (true, true) => self.matmul_t(b, g, true, true)?,
                    };
                    res.push((a, da));
                }
                if needs(self, b) {
                    let db = match (ta, tb) {
                        (false, false) => self.matmul_t(a, g, true, false)?,
                        (false, true) => self.matmul_t(g, a, true, false)?,
                        (true, false) => self.matmul_t(a, g, false, false)?,
                        (true, true) => self.matmul_t(g, a, true, true)?,
                    };
                    res.push((b, db));
                }
            }
            Op::Transpose(a) => res.push((a, self.transpose(g)?)),
            Op::Permute(a, ref perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                res.push((a, self.permute(g, &inverse)?));
            }
            Op::SumAll(a) | Op::SumAxis(a) | Op::SumTo(a) => {
                let shape = self.values[a.index()].shape().to_vec();
                res.push((a, self.expand(g, &shape)?));
            }
            Op::Expand(a) => {
                let shape = self.values[a.index()].shape().to_vec();
                res.push((a, self.sum_to(g, &shape)?));
            }
            Op::Softmax(x, axis) => {
                // dx = y ⊙ (g − Σ g⊙y)
                let gy = self.mul(g, out)?;
                let s = self.sum_axis(gy, axis)?;
                let diff = self.sub(g, s)?;
                res.push((x, self.mul(out, diff)?));
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                self.layernorm_vjp(x, gain, bias, eps, g, &mut res)?;
            }
            Op::Gather(a, ref idx) => {
                let rows = self.values[a.index()].shape()[0];
                res.push((a, self.scatter_add_rows(g, idx.clone(), rows)?));
            }
            Op::ScatterAdd(a, ref idx) => res.push((a, self.gather_rows(g, idx.clone())?)),
            Op::Slice { a, r0, c0 } => {
                let (rows, cols) = self.values[a.index()].dims2()?;
                res.push((a, self.pad(g, rows, cols, r0, c0)?));
            }
            Op::Pad { a, r0, c0 } => {
                let (nr, nc) = self.values[a.index()].dims2()?;
                res.push((a, self.slice(g, r0, nr, c0, nc)?));
            }
            Op::ConcatRows(ref parts) => {
                let cols = self.values[g.index()].shape()[1];
                let mut r0 = 0;
                for &p in parts {
                    let nr = self.values[p.index()].shape()[0];
                    if needs(self, p) {
                        res.push((p, self.slice(g, r0, nr, 0, cols)?));
                    }
                    r0 += nr;
                }
            }
            Op::ConcatCols(ref parts) => {
                let rows = self.values[g.index()].shape()[0];
                let mut c0 = 0;
                for &p in parts {
                    let nc = self.values[p.index()].shape()[1];
                    if needs(self, p) {
                        res.push((p, self.slice(g, 0, rows, c0, nc)?));
                    }
                    c0 += nc;
                }
            }
            Op::Reshape(a) => {
                let shape = self.values[a.index()].shape().to_vec();
                res.push((a, self.reshape(g, &shape)?));
            }
        }
        Ok(res)
    }

    fn layernorm_vjp(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
        g: Var,
        res: &mut Vec<(Var, Var)>,
    ) -> Result<()> {
        let xs = self.values[x.index()].shape().to_vec();
        let axis = xs.len() - 1;
        let inv_d = 1.0 / xs[axis] as f64;
        let gain_shape = self.values[gain.index()].shape().to_vec();
        let bias_shape = self.values[bias.index()].shape().to_vec();
        // Recompute the normalized input from differentiable primitives so
        // the result supports higher-order differentiation.
        let sx = self.sum_axis(x, axis)?;
        let mu = self.scale(sx, inv_d);
        let xc = self.sub(x, mu)?;
        let sq = self.square(xc);
        let sv = self.sum_axis(sq, axis)?;
        let var = self.scale(sv, inv_d);
        let var = self.add_scalar(var, eps);
        let std = self.sqrt(var);
        let xhat = self.div(xc, std)?;
        let rows: usize = xs.iter().take(axis).product();
        if self.requires[bias.index()] {
            let flat = self.reshape(g, &[rows, xs[axis]])?;
            let s = self.sum_axis(flat, 0)?;
            res.push((bias, self.reshape(s, &bias_shape)?));
        }
        if self.requires[gain.index()] {
            let gx = self.mul(g, xhat)?;
            let flat = self.reshape(gx, &[rows, xs[axis]])?;
            let s = self.sum_axis(flat, 0)?;
            res.push((gain, self.reshape(s, &gain_shape)?));
        }
        if self.requires[x.index()] {
            let gain_row = self.reshape(gain, &[xs[axis]])?;
            let gxh = self.mul(g, gain_row)?;
            let s1 = self.sum_axis(gxh, axis)?;
            let m1 = self.scale(s1, inv_d);
            let p = self.mul(gxh, xhat)?;
            let s2 = self.sum_axis(p, axis)?;
            let m2 = self.scale(s2, inv_d);
            let t = self.sub(gxh, m1)?;
            let u = self.mul(xhat, m2)?;
            let t = self.sub(t, u)?;
            res.push((x, self.div(t, std)?));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_values() {
        let mut g = Graph::default();
        let i2 = g.constant(Tensor::eye(2));
        let m = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1., 2., 3., 4.]);
        let col = g.constant(t(&[2, 1], &[5., 6.]));
        let q = g.matmul(m, col).unwrap();
        assert_eq!(g.value(q).data(), &[17., 39.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::default();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::Dimension { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn matmul_flop_delta() {
        let mut g = Graph::default();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 4]));
        assert_eq!(g.flops_report().total(), 0);
        g.matmul(a, b).unwrap();
        assert_eq!(g.flops_report().total(), 48);
    }

    #[test]
    fn silu_values() {
        let mut g = Graph::default();
        let x = g.constant(t(&[2], &[0.0, 1.0]));
        let y = g.silu(x);
        assert_eq!(g.value(y).data()[0], 0.0);
        let oracle = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((g.value(y).data()[1] - oracle).abs() < 1e-15);
        assert!((oracle - 0.731_058_578_630_005).abs() < 1e-12);
    }

    #[test]
    fn add_and_broadcast() {
        let mut g = Graph::default();
        let a = g.constant(t(&[2], &[1., 2.]));
        let b = g.constant(t(&[2], &[3., 4.]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4., 6.]);
        let m = g.constant(Tensor::zeros(&[2, 3]));
        let bad = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(g.add(m, bad), Err(Error::Dimension { .. })));
        let col = g.constant(t(&[2, 1], &[1., 2.]));
        let s = g.add(m, col).unwrap();
        assert_eq!(g.value(s).data(), &[1., 1., 1., 2., 2., 2.]);
    }

    #[test]
    fn elementwise_dispatch_checks_arity() {
        let mut g = Graph::default();
        let x = g.constant(t(&[1], &[1.0]));
        assert!(g
            .elementwise(ElementwiseOp::Binary(BinaryOp::Add), x, None)
            .is_err());
        assert!(g
            .elementwise(ElementwiseOp::Unary(UnaryOp::Sin), x, Some(x))
            .is_err());
        let y = g
            .elementwise(ElementwiseOp::Unary(UnaryOp::Square), x, None)
            .unwrap();
        assert_eq!(g.value(y).item(), 1.0);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::default();
        let a = g.constant(t(&[2], &[0., 0.]));
        let sa = g.softmax(a, 0).unwrap();
        assert_eq!(g.value(sa).data(), &[0.5, 0.5]);
        let b = g.constant(t(&[3], &[1., 1., 1.]));
        let sb = g.softmax(b, 0).unwrap();
        for &v in g.value(sb).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = g.constant(t(&[2], &[0., 3f64.ln()]));
        let sc = g.softmax(c, 0).unwrap();
        assert!((g.value(sc).data()[0] - 0.25).abs() < 1e-15);
        assert!((g.value(sc).data()[1] - 0.75).abs() < 1e-15);
        assert!(g.softmax(c, 1).is_err());
    }

    #[test]
    fn layernorm_examples() {
        let mut g = Graph::default();
        let gain = g.constant(t(&[2], &[1., 1.]));
        let bias = g.constant(t(&[2], &[0., 0.]));
        let c = g.constant(t(&[1, 2], &[3., 3.]));
        let y = g.layernorm(c, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0., 0.]);
        let x = g.constant(t(&[1, 2], &[1., 3.]));
        let y = g.layernorm(x, gain, bias, 1e-14).unwrap();
        assert!((g.value(y).data()[0] + 1.0).abs() < 1e-12);
        assert!((g.value(y).data()[1] - 1.0).abs() < 1e-12);
        let zero = g.constant(t(&[2], &[0., 0.]));
        let five = g.constant(t(&[2], &[5., 5.]));
        let x = g.constant(t(&[1, 2], &[-1., 1.]));
        let y = g.layernorm(x, zero, five, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[5., 5.]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut g = Graph::default();
        let x = g.leaf(t(&[3], &[1., 2., 3.]), true);
        let c = g.constant(t(&[3], &[1., 1., 1.]));
        let sq = g.square(x);
        let y = g.mul(sq, c).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2., 4., 6.]);
        assert!(!grads.contains(c));
    }

    #[test]
    fn backward_rejects_non_scalar_and_repeat() {
        let mut g = Graph::default();
        let x = g.leaf(t(&[2], &[1., 2.]), true);
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::State(_))));
        // forward values survive the backward pass
        assert_eq!(g.value(l).item(), 5.0);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut g = Graph::default();
        let x = g.leaf(t(&[2], &[1., 2.]), true);
        let w = g.leaf(t(&[1], &[3.]), true);
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0.0]);
    }

    #[test]
    fn linear_layer_backward_flops() {
        let mut g = Graph::default();
        let x = g.leaf(Tensor::full(&[4, 3], 0.5), true);
        let w = g.leaf(Tensor::full(&[3, 5], 0.1), true);
        let y = g.matmul(x, w).unwrap();
        let forward_mm = g.flops_report().get(OpClass::Matmul);
        let l = g.sum(y);
        let before = g.flops_report().get(OpClass::Matmul);
        g.backward(l).unwrap();
        let backward_mm = g.flops_report().get(OpClass::Matmul) - before;
        assert_eq!(forward_mm, 2 * 4 * 5 * 3);
        assert_eq!(backward_mm, 2 * forward_mm);
    }

    #[test]
    fn second_order_gradient() {
        // f = sum(x^3 via x*x*x); df/dx = 3x^2; d/dx sum(df/dx) = 6x
        let mut g = Graph::default();
        let x = g.leaf(t(&[2], &[1.0, -2.0]), true);
        let x2 = g.mul(x, x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let f = g.sum(x3);
        let dx = g.grad(f, &[x], true).unwrap()[0];
        assert_eq!(g.value(dx).data(), &[3.0, 12.0]);
        let s = g.sum(dx);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0, -12.0]);
    }

    #[test]
    fn reduced_precision_rounds_values() {
        let mut g = Graph::new(Precision::Reduced);
        let x = g.constant(t(&[1], &[0.1]));
        assert_eq!(g.value(x).item(), 0.1f32 as f64);
        let y = g.scale(x, 3.0);
        assert_eq!(g.value(y).item(), (0.1f32 as f64 * 3.0) as f32 as f64);
    }
}
