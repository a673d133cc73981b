//! Atomistic transformer: summed embeddings, pre-norm encoder, three heads.

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

use super::batch::Batch;
use super::config::ModelConfig;
use super::encoding::index_table;
use super::params::{Init, Linear, Mlp, ParamId};
use super::BatchOutput;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayer {
    norm1: (ParamId, ParamId),
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm2: (ParamId, ParamId),
    ff: Mlp,
}

#[derive(Clone, Debug)]
pub(crate) struct Transformer {
    elements: ParamId,
    cart: Mlp,
    frac: Mlp,
    layers: Vec<EncoderLayer>,
    energy: Mlp,
    force: Mlp,
    stress: Mlp,
}

/// `[6, 9]` map from Voigt (xx, yy, zz, yz, xz, xy) to a row-major
/// symmetric 3×3.
pub(crate) fn voigt_to_matrix() -> Tensor {
    let mut m = vec![0.0; 54];
    for (k, &(i, j)) in crate::data::VOIGT.iter().enumerate() {
        m[k * 9 + i * 3 + j] = 1.0;
        m[k * 9 + j * 3 + i] = 1.0;
    }
    Tensor::new(vec![6, 9], m).expect("voigt shape")
}

impl Transformer {
    pub fn build(cfg: &ModelConfig, init: &mut Init) -> Self {
        let d = cfg.d_model;
        let elements = init.embedding("embed.elements", cfg.max_num_elements, d);
        let cart = init.mlp("embed.cart", 3, d, d);
        let frac = init.mlp("embed.frac", 3, d, d);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayer {
                    norm1: (
                        init.vector(&format!("{p}.norm1.gain"), 1.0, d),
                        init.vector(&format!("{p}.norm1.bias"), 0.0, d),
                    ),
                    query: init.linear(&format!("{p}.attn.query"), d, d),
                    key: init.linear(&format!("{p}.attn.key"), d, d),
                    value: init.linear(&format!("{p}.attn.value"), d, d),
                    out: init.linear(&format!("{p}.attn.out"), d, d),
                    norm2: (
                        init.vector(&format!("{p}.norm2.gain"), 1.0, d),
                        init.vector(&format!("{p}.norm2.bias"), 0.0, d),
                    ),
                    ff: init.mlp(&format!("{p}.ff"), d, cfg.d_ff, d),
                }
            })
            .collect();
        Self {
            elements,
            cart,
            frac,
            layers,
            energy: init.mlp("head.energy", d, d, 1),
            force: init.mlp("head.force", d, d, 3),
            stress: init.mlp("head.stress", d, d, 6),
        }
    }

    /// Sum of the element, Cartesian, fractional and (optionally) index
    /// pathways, `[B·n_max, d]`.
    pub fn embed(
        &self,
        g: &mut Graph,
        p: &[Var],
        cfg: &ModelConfig,
        batch: &Batch,
        cart: Var,
        frac: Var,
    ) -> Result<Var> {
        let elements = g.gather_rows(p[self.elements], batch.element_rows())?;
        let c = self.cart.forward(g, p, cart)?;
        let f = self.frac.forward(g, p, frac)?;
        let x = g.add(elements, c)?;
        let x = g.add(x, f)?;
        if !cfg.index_encoding {
            return Ok(x);
        }
        let pe = g.constant(index_table(batch.len(), batch.n_max(), cfg.d_model)?);
        g.add(x, pe)
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        p: &[Var],
        cfg: &ModelConfig,
        batch: &Batch,
        mut x: Var,
    ) -> Result<Var> {
        if self.layers.is_empty() {
            return Ok(x);
        }
        let mask = g.constant(batch.key_mask());
        for layer in &self.layers {
            let h = g.layernorm(x, p[layer.norm1.0], p[layer.norm1.1], LN_EPS)?;
            let a = self.attention(g, p, cfg, batch, layer, h, mask)?;
            x = g.add(x, a)?;
            let h = g.layernorm(x, p[layer.norm2.0], p[layer.norm2.1], LN_EPS)?;
            let f = layer.ff.forward(g, p, h)?;
            x = g.add(x, f)?;
        }
        Ok(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        p: &[Var],
        cfg: &ModelConfig,
        batch: &Batch,
        layer: &EncoderLayer,
        h: Var,
        mask: Var,
    ) -> Result<Var> {
        let (b, n, heads) = (batch.len(), batch.n_max(), cfg.n_heads);
        let dh = cfg.d_model / heads;
        let split = |g: &mut Graph, lin: &Linear| -> Result<Var> {
            let t = lin.forward(g, p, h)?;
            let t = g.reshape(t, &[b, n, heads, dh])?;
            let t = g.permute(t, &[0, 2, 1, 3])?;
            g.reshape(t, &[b * heads, n, dh])
        };
        let q = split(g, &layer.query)?;
        let k = split(g, &layer.key)?;
        let v = split(g, &layer.value)?;
        let scores = g.matmul_t(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let scores = g.reshape(scores, &[b, heads, n, n])?;
        let scores = g.add(scores, mask)?;
        let weights = g.softmax(scores, 3)?;
        let weights = g.reshape(weights, &[b * heads, n, n])?;
        let o = g.matmul(weights, v)?;
        let o = g.reshape(o, &[b, heads, n, dh])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[b * n, cfg.d_model])?;
        layer.out.forward(g, p, o)
    }

    pub fn heads(
        &self,
        g: &mut Graph,
        p: &[Var],
        batch: &Batch,
        latent: Var,
    ) -> Result<BatchOutput> {
        let pool = g.constant(batch.mean_pool());
        let pooled = g.matmul(pool, latent)?;
        let energy = self.energy.forward(g, p, pooled)?;
        let forces = self.force.forward(g, p, latent)?;
        let voigt = self.stress.forward(g, p, pooled)?;
        let to_matrix = g.constant(voigt_to_matrix());
        let stress = g.matmul(voigt, to_matrix)?;
        Ok(BatchOutput {
            energy,
            forces,
            stress,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        cfg: &ModelConfig,
        batch: &Batch,
    ) -> Result<BatchOutput> {
        let cart = g.constant(batch.padded(|r| &r.cart));
        let frac = g.constant(batch.padded(|r| &r.frac));
        let x = self.embed(g, p, cfg, batch, cart, frac)?;
        let latent = self.encode(g, p, cfg, batch, x)?;
        self.heads(g, p, batch, latent)
    }
}
