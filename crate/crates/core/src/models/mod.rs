//! The atomistic transformer, the invariant surrogate and constant baselines.

mod baseline;
mod batch;
mod config;
mod encoding;
mod params;
mod surrogate;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::data::{Mat3, MaterialRecord, SummaryStats, Vec3};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Precision, Tensor, Var};

pub use baseline::baseline_predict;
pub use batch::Batch;
pub use config::{BaselineMode, ModelConfig, ModelKind, SurrogateSettings};
pub use encoding::sinusoidal_encoding;
pub use params::{Param, ParamId, ParamStore};
pub use surrogate::{neighbor_pairs, Neighbor};

use params::Init;
use surrogate::Surrogate;
use transformer::Transformer;

/// Energy (eV), per-atom forces (eV/Å) and symmetric stress (eV/Å³).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EFSPrediction {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub stress: Mat3,
}

impl EFSPrediction {
    pub fn zeros(n_atoms: usize) -> Self {
        Self {
            energy: 0.0,
            forces: vec![[0.0; 3]; n_atoms],
            stress: [[0.0; 3]; 3],
        }
    }

    /// The labels of a record, as if predicted perfectly.
    pub fn from_record(r: &MaterialRecord) -> Self {
        Self {
            energy: r.energy,
            forces: r.forces.clone(),
            stress: r.stress,
        }
    }
}

/// Graph outputs for a padded batch: energy `[B, 1]`, forces
/// `[B·n_max, 3]` (padded rows zero or ignored) and row-major stress `[B, 9]`.
#[derive(Clone, Copy, Debug)]
pub struct BatchOutput {
    pub energy: Var,
    pub forces: Var,
    pub stress: Var,
}

impl BatchOutput {
    pub fn predictions(&self, g: &Graph, batch: &Batch) -> Vec<EFSPrediction> {
        let (e, f, s) = (
            g.value(self.energy),
            g.value(self.forces),
            g.value(self.stress),
        );
        batch
            .records()
            .iter()
            .enumerate()
            .map(|(b, r)| {
                let row0 = b * batch.n_max();
                let forces = (0..r.n_atoms())
                    .map(|i| {
                        let at = (row0 + i) * 3;
                        [f.data()[at], f.data()[at + 1], f.data()[at + 2]]
                    })
                    .collect();
                let sd = &s.data()[b * 9..b * 9 + 9];
                EFSPrediction {
                    energy: e.data()[b],
                    forces,
                    stress: [
                        [sd[0], sd[1], sd[2]],
                        [sd[3], sd[4], sd[5]],
                        [sd[6], sd[7], sd[8]],
                    ],
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Arch {
    Transformer(Transformer),
    Surrogate(Surrogate),
    Baseline(BaselineMode, Box<SummaryStats>),
}

/// A configured model with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    arch: Arch,
}

impl Model {
    /// Build and initialize a trainable model from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut init = Init::new(&mut params, seed);
        let arch = match config.kind {
            ModelKind::Transformer => Arch::Transformer(Transformer::build(&config, &mut init)),
            ModelKind::InvariantSurrogate => Arch::Surrogate(Surrogate::build(&config, &mut init)),
            ModelKind::Baseline(_) => {
                return Err(Error::config("baselines are built from dataset statistics"));
            }
        };
        Ok(Self {
            config,
            params,
            arch,
        })
    }

    /// Rebuild a model around existing parameters, checking that names and
    /// shapes match the layout `config` produces.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let same = model.params.len() == params.len()
            && model.params.iter().zip(params.iter()).all(|(a, b)| {
                a.name == b.name && a.value.shape() == b.value.shape() && a.embedding == b.embedding
            });
        if !same {
            return Err(Error::Load(
                "parameter layout does not match the model config".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn baseline(mode: BaselineMode, stats: SummaryStats) -> Self {
        Self {
            config: ModelConfig {
                kind: ModelKind::Baseline(mode),
                ..ModelConfig::default()
            },
            params: ParamStore::default(),
            arch: Arch::Baseline(mode, Box::new(stats)),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self.arch, Arch::Baseline(..))
    }

    /// Batched forward pass. `params` are this model's parameters registered
    /// on `g` (see [`ParamStore::register`]). `create_graph` keeps the
    /// surrogate's gradient forces differentiable.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        batch: &Batch,
        create_graph: bool,
    ) -> Result<BatchOutput> {
        self.check_elements(batch)?;
        match &self.arch {
            Arch::Transformer(t) => t.forward(g, params, &self.config, batch),
            Arch::Surrogate(s) => s.forward(g, params, &self.config, batch, create_graph),
            Arch::Baseline(mode, stats) => {
                let preds: Vec<_> = batch
                    .records()
                    .iter()
                    .map(|r| baseline_predict(*mode, stats, r))
                    .collect();
                let energy = Tensor::new(
                    vec![batch.len(), 1],
                    preds.iter().map(|p| p.energy).collect(),
                )?;
                let stress = preds
                    .iter()
                    .flat_map(|p| p.stress.into_iter().flatten())
                    .collect();
                Ok(BatchOutput {
                    energy: g.constant(energy),
                    forces: g.constant(Tensor::zeros(&[batch.rows(), 3])),
                    stress: g.constant(Tensor::new(vec![batch.len(), 9], stress)?),
                })
            }
        }
    }

    fn check_elements(&self, batch: &Batch) -> Result<()> {
        if let Arch::Baseline(..) = self.arch {
            return Ok(());
        }
        let max = self.config.max_num_elements;
        for r in batch.records() {
            if let Some(z) = r
                .atomic_numbers
                .iter()
                .find(|&&z| z == 0 || z as usize > max)
            {
                return Err(Error::Domain(format!(
                    "atomic number {z} outside [1, {max}]"
                )));
            }
        }
        Ok(())
    }

    fn transformer(&self) -> Result<&Transformer> {
        match &self.arch {
            Arch::Transformer(t) => Ok(t),
            _ => Err(Error::config("operation needs a transformer model")),
        }
    }

    /// Summed atom embeddings `[B·n_max, d]` for the given coordinate inputs.
    pub fn embed_atoms(
        &self,
        g: &mut Graph,
        params: &[Var],
        batch: &Batch,
        cart: Var,
        frac: Var,
    ) -> Result<Var> {
        self.check_elements(batch)?;
        self.transformer()?
            .embed(g, params, &self.config, batch, cart, frac)
    }

    /// Encoder stack over embeddings `[B·n_max, d]`.
    pub fn transformer_forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        batch: &Batch,
        x: Var,
    ) -> Result<Var> {
        self.transformer()?
            .encode(g, params, &self.config, batch, x)
    }

    /// Energy, force and stress heads over encoder output.
    pub fn heads_forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        batch: &Batch,
        latent: Var,
    ) -> Result<BatchOutput> {
        self.transformer()?.heads(g, params, batch, latent)
    }

    pub fn predict_batch(
        &self,
        records: &[MaterialRecord],
        precision: Precision,
    ) -> Result<Vec<EFSPrediction>> {
        let batch = Batch::new(records)?;
        let mut g = Graph::new(precision);
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect();
        let out = self.forward(&mut g, &params, &batch, false)?;
        Ok(out.predictions(&g, &batch))
    }

    pub fn predict(&self, record: &MaterialRecord) -> Result<EFSPrediction> {
        let mut out = self.predict_batch(std::slice::from_ref(record), Precision::High)?;
        Ok(out.remove(0))
    }
}

/// Scalar learnables; without embeddings this is the model-size axis.
pub fn count_params(model: &Model, include_embeddings: bool) -> usize {
    model.params.count(include_embeddings)
}
