//! Named parameter storage and the small layer building blocks.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Index into a [`ParamStore`].
pub type ParamId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Element-embedding tables are excluded from the non-embedding count.
    pub embedding: bool,
}

/// Parameters in declaration order. Graph registration, optimizer state and
/// checkpoints all share this order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    fn push(&mut self, name: String, value: Tensor, embedding: bool) -> ParamId {
        self.params.push(Param {
            name,
            value,
            embedding,
        });
        self.params.len() - 1
    }

    /// Scalar learnables, optionally leaving out embedding tables.
    pub fn count(&self, include_embeddings: bool) -> usize {
        self.params
            .iter()
            .filter(|p| include_embeddings || !p.embedding)
            .map(|p| p.value.len())
            .sum()
    }

    /// Register every parameter as a gradient-tracked leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), true))
            .collect()
    }

    /// Zero every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with(prefix))
        {
            p.value.data_mut().fill(0.0);
        }
    }

    /// All values concatenated in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count(true) {
            return Err(Error::contract(format!(
                "expected {} parameter values, got {}",
                self.count(true),
                flat.len()
            )));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

/// Seeded initializer: weights and embeddings uniform in ±1/√fan_in,
/// biases zero.
pub(crate) struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape, data).expect("init shape")
    }

    /// Element table; each row is looked up by a one-hot index, so fan_in is 1.
    pub fn embedding(&mut self, name: &str, rows: usize, width: usize) -> ParamId {
        let t = self.uniform(vec![rows, width], 1);
        self.store.push(name.into(), t, true)
    }

    pub fn vector(&mut self, name: &str, value: f64, width: usize) -> ParamId {
        self.store
            .push(name.into(), Tensor::full(&[width], value), false)
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self.uniform(vec![fan_in, fan_out], fan_in);
        let weight = self.store.push(format!("{name}.weight"), w, false);
        let bias = Some(
            self.store
                .push(format!("{name}.bias"), Tensor::zeros(&[fan_out]), false),
        );
        Linear { weight, bias }
    }

    pub fn linear_no_bias(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self.uniform(vec![fan_in, fan_out], fan_in);
        let weight = self.store.push(format!("{name}.weight"), w, false);
        Linear { weight, bias: None }
    }

    /// `fan_in → hidden → fan_out` with a SiLU in between.
    pub fn mlp(&mut self, name: &str, fan_in: usize, hidden: usize, fan_out: usize) -> Mlp {
        Mlp {
            first: self.linear(&format!("{name}.0"), fan_in, hidden),
            second: self.linear(&format!("{name}.1"), hidden, fan_out),
        }
    }
}

/// `x·W + b` on row-major activations.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.weight])?;
        match self.bias {
            Some(b) => g.add(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.first.forward(g, p, x)?;
        let h = g.silu(h);
        self.second.forward(g, p, h)
    }
}
