use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_MAX_NUM_ELEMENTS;
use crate::error::{Error, Result};

/// Constant-prediction reference models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Training-mean energy and stress, zero forces.
    MeanEnergyZeroForce,
    AllZero,
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_energy_zero_force" => Ok(Self::MeanEnergyZeroForce),
            "all_zero" => Ok(Self::AllZero),
            other => Err(Error::config(format!("unknown baseline mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    InvariantSurrogate,
    Baseline(BaselineMode),
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Self::Transformer),
            "invariant_surrogate" | "surrogate" => Ok(Self::InvariantSurrogate),
            other => other
                .strip_prefix("baseline:")
                .ok_or_else(|| Error::config(format!("unknown model kind `{other}`")))?
                .parse()
                .map(Self::Baseline),
        }
    }
}

/// Settings used only by the invariant surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSettings {
    /// Neighbor cutoff in Å.
    pub cutoff: f64,
    pub n_rbf: usize,
    pub rounds: usize,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        Self {
            cutoff: 6.0,
            n_rbf: 16,
            rounds: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    /// Encoder depth. Zero makes the encoder the identity.
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Rows of the element table; valid atomic numbers are `1..=max_num_elements`.
    pub max_num_elements: usize,
    /// Add the sinusoidal atom-index pathway to the embedding.
    pub index_encoding: bool,
    pub surrogate: SurrogateSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Transformer,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_num_elements: DEFAULT_MAX_NUM_ELEMENTS,
            index_encoding: true,
            surrogate: SurrogateSettings::default(),
        }
    }
}

impl ModelConfig {
    pub fn transformer(d_model: usize, n_layers: usize, n_heads: usize, d_ff: usize) -> Self {
        Self {
            d_model,
            n_layers,
            n_heads,
            d_ff,
            ..Self::default()
        }
    }

    pub fn surrogate(d_model: usize) -> Self {
        Self {
            kind: ModelKind::InvariantSurrogate,
            d_model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ModelKind::Baseline(_) = self.kind {
            return Ok(());
        }
        if self.d_model == 0 || self.max_num_elements == 0 {
            return Err(Error::config(
                "d_model and max_num_elements must be at least 1",
            ));
        }
        match self.kind {
            ModelKind::Transformer => {
                if self.n_heads == 0 || self.d_ff == 0 {
                    return Err(Error::config("n_heads and d_ff must be at least 1"));
                }
                if !self.d_model.is_multiple_of(self.n_heads) {
                    return Err(Error::config(format!(
                        "d_model {} is not divisible by n_heads {}",
                        self.d_model, self.n_heads
                    )));
                }
                if self.index_encoding && !self.d_model.is_multiple_of(2) {
                    return Err(Error::config(format!(
                        "index encoding needs an even d_model, got {}",
                        self.d_model
                    )));
                }
            }
            ModelKind::InvariantSurrogate => {
                let s = &self.surrogate;
                if !(s.cutoff.is_finite() && s.cutoff > 0.0) || s.n_rbf < 2 {
                    return Err(Error::config(
                        "surrogate needs a positive cutoff and at least 2 radial bases",
                    ));
                }
            }
            ModelKind::Baseline(_) => {}
        }
        Ok(())
    }
}
