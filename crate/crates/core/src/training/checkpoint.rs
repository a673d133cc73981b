//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header,
//! then little-endian `f64` blocks for parameters, first moments and second
//! moments, each in parameter declaration order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{count_params, Model, ModelConfig, Param, ParamStore};
use crate::tensor::Tensor;

use super::optim::Adam;
use super::record::RunRecord;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MSCALECK";

/// Position of the shuffling RNG.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string (it is 128-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Load(format!("bad rng position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub record: RunRecord,
    pub rng: RngState,
    /// Optimizer steps completed.
    pub step: usize,
    /// Epochs completed.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    embedding: bool,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    param_count: usize,
    dataset_size: usize,
    step: usize,
    epoch: usize,
    params: Vec<ParamMeta>,
    optimizer: OptimizerMeta,
    rng: RngState,
    record: RunRecord,
}

impl Checkpoint {
    pub fn capture(
        model: &Model,
        optimizer: &Adam,
        record: &RunRecord,
        rng: &ChaCha8Rng,
        step: usize,
        epoch: usize,
    ) -> Self {
        Self {
            model: model.config().clone(),
            params: model.params().clone(),
            optimizer: optimizer.clone(),
            record: record.clone(),
            rng: RngState::capture(rng),
            step,
            epoch,
        }
    }

    /// Rebuild the model this checkpoint was taken from.
    pub fn to_model(&self) -> Result<Model> {
        Model::with_params(self.model.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = self.to_model()?;
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            param_count: count_params(&model, false),
            dataset_size: self.record.dataset_size,
            step: self.step,
            epoch: self.epoch,
            params: self
                .params
                .iter()
                .map(|p| ParamMeta {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    embedding: p.embedding,
                })
                .collect(),
            optimizer: OptimizerMeta {
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                eps: self.optimizer.eps,
                t: self.optimizer.t,
            },
            rng: self.rng.clone(),
            record: self.record.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 24 * self.params.count(true));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let blocks = self
            .params
            .iter()
            .map(|p| p.value.data())
            .chain(self.optimizer.m.iter().map(Vec::as_slice))
            .chain(self.optimizer.v.iter().map(Vec::as_slice));
        for block in blocks {
            for x in block {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Load(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(20..20 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Load(format!("header: {e}")))?;

        let mut floats = bytes[20 + len..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let sizes: Vec<usize> = header
            .params
            .iter()
            .map(|p| p.shape.iter().product())
            .collect();
        let total: usize = sizes.iter().sum();
        if bytes.len() - 20 - len != 24 * total {
            return Err(bad("parameter blocks do not match the header"));
        }
        let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
        let mut params = Vec::with_capacity(sizes.len());
        for (meta, &n) in header.params.iter().zip(&sizes) {
            params.push(Param {
                name: meta.name.clone(),
                value: Tensor::new(meta.shape.clone(), take(n))?,
                embedding: meta.embedding,
            });
        }
        let m = sizes.iter().map(|&n| take(n)).collect();
        let v = sizes.iter().map(|&n| take(n)).collect();
        let ckpt = Self {
            model: header.model,
            params: ParamStore::from_params(params),
            optimizer: Adam {
                beta1: header.optimizer.beta1,
                beta2: header.optimizer.beta2,
                eps: header.optimizer.eps,
                t: header.optimizer.t,
                m,
                v,
            },
            record: header.record,
            rng: header.rng,
            step: header.step,
            epoch: header.epoch,
        };
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
