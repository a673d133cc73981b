//! Distance-only message-passing model. Energy depends on interatomic
//! distances alone; forces and stress are derivatives of that energy.

use std::f64::consts::PI;

use crate::data::{lattice, MaterialRecord};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

use super::batch::Batch;
use super::config::ModelConfig;
use super::params::{Init, Linear, Mlp, ParamId};
use super::BatchOutput;

/// A directed neighbor pair: atom `j` shifted by `shift` lattice vectors,
/// as seen from atom `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub i: usize,
    pub j: usize,
    pub shift: [f64; 3],
}

/// All periodic images within `cutoff` of each atom, self excluded.
pub fn neighbor_pairs(
    cart: &[[f64; 3]],
    cell: &lattice::Mat3,
    cutoff: f64,
) -> Result<Vec<Neighbor>> {
    let frac = lattice::to_fractional(cart, cell)?;
    let vol = lattice::volume(cell);
    if vol <= 0.0 {
        return Err(Error::Numeric("degenerate cell".into()));
    }
    // layers of images needed along each lattice direction
    let reach: [i64; 3] = std::array::from_fn(|k| {
        let area = lattice::norm(&lattice::cross(&cell[(k + 1) % 3], &cell[(k + 2) % 3]));
        (cutoff * area / vol).ceil() as i64 + 1
    });
    let c2 = cutoff * cutoff;
    let mut out = Vec::new();
    for i in 0..cart.len() {
        for j in 0..cart.len() {
            let base: [f64; 3] = std::array::from_fn(|k| -(frac[j][k] - frac[i][k]).round());
            for a in -reach[0]..=reach[0] {
                for b in -reach[1]..=reach[1] {
                    for c in -reach[2]..=reach[2] {
                        let shift = [base[0] + a as f64, base[1] + b as f64, base[2] + c as f64];
                        if i == j && shift == [0.0; 3] {
                            continue;
                        }
                        let off = lattice::vec_mat(&shift, cell);
                        let d: [f64; 3] = std::array::from_fn(|k| cart[j][k] - cart[i][k] + off[k]);
                        if d.iter().map(|x| x * x).sum::<f64>() < c2 {
                            out.push(Neighbor { i, j, shift });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub(crate) struct Surrogate {
    elements: ParamId,
    filters: Vec<Linear>,
    updates: Vec<Linear>,
    readout: Mlp,
}

impl Surrogate {
    pub fn build(cfg: &ModelConfig, init: &mut Init) -> Self {
        let d = cfg.d_model;
        let s = &cfg.surrogate;
        let elements = init.embedding("embed.elements", cfg.max_num_elements, d);
        let mut filters = Vec::new();
        let mut updates = Vec::new();
        for t in 0..s.rounds {
            // no bias, so messages vanish with the cutoff envelope
            filters.push(init.linear_no_bias(&format!("interaction.{t}.filter"), s.n_rbf, d));
            updates.push(init.linear(&format!("interaction.{t}.update"), d, d));
        }
        Self {
            elements,
            filters,
            updates,
            readout: init.mlp("readout", d, d, 1),
        }
    }

    /// Total energy as a rank-0 value. `pos` is `[n, 3]`; `strain` is a
    /// `[3, 3]` homogeneous deformation applied to positions and cell.
    #[allow(clippy::too_many_arguments)]
    pub fn energy(
        &self,
        g: &mut Graph,
        p: &[Var],
        cfg: &ModelConfig,
        rec: &MaterialRecord,
        pos: Var,
        strain: Var,
    ) -> Result<Var> {
        let s = &cfg.surrogate;
        let n = rec.n_atoms();
        let pairs = neighbor_pairs(&rec.cart, &rec.cell, s.cutoff)?;
        let src: Vec<usize> = pairs.iter().map(|q| q.i).collect();
        let dst: Vec<usize> = pairs.iter().map(|q| q.j).collect();
        let shifts: Vec<f64> = pairs.iter().flat_map(|q| q.shift).collect();

        let eye = g.constant(Tensor::eye(3));
        let deform = g.add(eye, strain)?;
        let pos = g.matmul(pos, deform)?;
        let cell = g.constant(Tensor::from_mat3(&rec.cell));
        let cell = g.matmul(cell, deform)?;

        let pi = g.gather_rows(pos, src.clone())?;
        let pj = g.gather_rows(pos, dst.clone())?;
        let shifts = g.constant(Tensor::new(vec![pairs.len(), 3], shifts)?);
        let offset = g.matmul(shifts, cell)?;
        let diff = g.sub(pj, pi)?;
        let diff = g.add(diff, offset)?;
        let sq = g.square(diff);
        let r2 = g.sum_axis(sq, 1)?;
        let r = g.sqrt(r2);

        let spacing = s.cutoff / (s.n_rbf - 1) as f64;
        let centers: Vec<f64> = (0..s.n_rbf).map(|k| k as f64 * spacing).collect();
        let centers = g.constant(Tensor::new(vec![1, s.n_rbf], centers)?);
        let delta = g.sub(r, centers)?;
        let delta = g.square(delta);
        let expo = g.scale(delta, -0.5 / (spacing * spacing));
        let basis = g.exp(expo);
        let envelope = g.scale(r, PI / s.cutoff);
        let envelope = g.cos(envelope);
        let envelope = g.add_scalar(envelope, 1.0);
        let envelope = g.scale(envelope, 0.5);
        let edge = g.mul(basis, envelope)?;

        let rows: Vec<usize> = rec.atomic_numbers.iter().map(|&z| z as usize - 1).collect();
        let mut h = g.gather_rows(p[self.elements], rows)?;
        for (filter, update) in self.filters.iter().zip(&self.updates) {
            let w = filter.forward(g, p, edge)?;
            let hj = g.gather_rows(h, dst.clone())?;
            let msg = g.mul(w, hj)?;
            let agg = g.scatter_add_rows(msg, src.clone(), n)?;
            let u = update.forward(g, p, agg)?;
            let u = g.silu(u);
            h = g.add(h, u)?;
        }
        let per_atom = self.readout.forward(g, p, h)?;
        Ok(g.sum(per_atom))
    }

    /// Energies plus `−∂E/∂r` forces and `−(1/V) ∂E/∂ε` stress. With
    /// `create_graph` the derivatives stay differentiable for training.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        cfg: &ModelConfig,
        batch: &Batch,
        create_graph: bool,
    ) -> Result<BatchOutput> {
        let mut energies = Vec::with_capacity(batch.len());
        let mut forces = Vec::new();
        let mut stresses = Vec::with_capacity(batch.len());
        for rec in batch.records() {
            let pos = g.leaf(Tensor::from_vec3s(&rec.cart), true);
            let strain = g.leaf(Tensor::zeros(&[3, 3]), true);
            let e = self.energy(g, p, cfg, rec, pos, strain)?;
            let grads = g.grad(e, &[pos, strain], create_graph)?;
            forces.push(g.neg(grads[0]));
            let pad = batch.n_max() - rec.n_atoms();
            if pad > 0 {
                forces.push(g.constant(Tensor::zeros(&[pad, 3])));
            }
            let dt = g.transpose(grads[1])?;
            let sym = g.add(grads[1], dt)?;
            let stress = g.scale(sym, -0.5 / rec.volume());
            stresses.push(g.reshape(stress, &[1, 9])?);
            energies.push(g.reshape(e, &[1, 1])?);
        }
        Ok(BatchOutput {
            energy: g.concat_rows(&energies)?,
            forces: g.concat_rows(&forces)?,
            stress: g.concat_rows(&stresses)?,
        })
    }
}
