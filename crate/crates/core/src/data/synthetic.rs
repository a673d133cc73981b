//! Synthetic structures labelled by a truncated Lennard-Jones potential in a
//! cubic periodic cell under the minimum-image convention.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lattice::{Mat3, Vec3};
use super::record::MaterialRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LennardJones {
    /// Well depth in eV.
    pub epsilon: f64,
    /// Zero-crossing distance in Å.
    pub sigma: f64,
    /// Interaction cutoff in Å.
    pub cutoff: f64,
}

impl Default for LennardJones {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            sigma: 2.0,
            cutoff: 5.0,
        }
    }
}

impl LennardJones {
    /// Pair energy and `dU/dr`; zero beyond the cutoff.
    pub fn pair(&self, r: f64) -> (f64, f64) {
        if r >= self.cutoff {
            return (0.0, 0.0);
        }
        let sr6 = (self.sigma / r).powi(6);
        let sr12 = sr6 * sr6;
        let u = 4.0 * self.epsilon * (sr12 - sr6);
        let du = -24.0 * self.epsilon * (2.0 * sr12 - sr6) / r;
        (u, du)
    }
}

/// Parameters of the synthetic structure generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub potential: LennardJones,
    /// Cubic cell edge in Å; must be at least twice the cutoff.
    pub cell_length: f64,
    /// Minimum accepted pair distance in Å. Never below `0.1·sigma`.
    pub min_separation: f64,
    /// Atomic numbers drawn uniformly for each atom.
    pub elements: Vec<u32>,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        let potential = LennardJones::default();
        Self {
            cell_length: 2.0 * potential.cutoff,
            min_separation: 0.9 * potential.sigma,
            potential,
            elements: vec![1, 6, 8, 14],
        }
    }
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        let p = &self.potential;
        if !(p.epsilon > 0.0 && p.sigma > 0.0 && p.cutoff > 0.0) {
            return Err(Error::config("Lennard-Jones parameters must be positive"));
        }
        if self.cell_length < 2.0 * p.cutoff {
            return Err(Error::config(format!(
                "cell length {} Å is below twice the cutoff {} Å (minimum image)",
                self.cell_length, p.cutoff
            )));
        }
        if self.elements.is_empty() || self.elements.contains(&0) {
            return Err(Error::config(
                "element list must be non-empty and exclude 0",
            ));
        }
        Ok(())
    }

    fn cell(&self) -> Mat3 {
        let a = self.cell_length;
        [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]]
    }
}

fn minimum_image(d: f64, l: f64) -> f64 {
    d - l * (d / l).round()
}

fn displacement(ri: &Vec3, rj: &Vec3, l: f64) -> Vec3 {
    [
        minimum_image(ri[0] - rj[0], l),
        minimum_image(ri[1] - rj[1], l),
        minimum_image(ri[2] - rj[2], l),
    ]
}

/// Lennard-Jones energy of a configuration in a cubic cell of edge `l`.
pub fn lj_energy(cart: &[Vec3], l: f64, lj: &LennardJones) -> f64 {
    let mut e = 0.0;
    for i in 0..cart.len() {
        for j in i + 1..cart.len() {
            let d = displacement(&cart[i], &cart[j], l);
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            e += lj.pair(r).0;
        }
    }
    e
}

/// Energy, analytic forces `−∇E`, and virial stress `+Σ r_ij ⊗ f_ij / V`.
pub fn lj_energy_forces_stress(cart: &[Vec3], l: f64, lj: &LennardJones) -> (f64, Vec<Vec3>, Mat3) {
    let n = cart.len();
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; n];
    let mut virial = [[0.0; 3]; 3];
    for i in 0..n {
        for j in i + 1..n {
            let d = displacement(&cart[i], &cart[j], l);
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let (u, du) = lj.pair(r);
            if u == 0.0 && du == 0.0 {
                continue;
            }
            energy += u;
            // force on i from j
            let f = [-du * d[0] / r, -du * d[1] / r, -du * d[2] / r];
            for k in 0..3 {
                forces[i][k] += f[k];
                forces[j][k] -= f[k];
            }
            for a in 0..3 {
                for b in 0..3 {
                    virial[a][b] += d[a] * f[b];
                }
            }
        }
    }
    let vol = l * l * l;
    let mut stress = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            stress[a][b] = 0.5 * (virial[a][b] + virial[b][a]) / vol;
        }
    }
    (energy, forces, stress)
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Generate `n_materials` labelled structures; deterministic given `seed`.
pub fn generate_synthetic(
    n_materials: usize,
    atoms_range: (usize, usize),
    seed: u64,
    params: &SyntheticParams,
) -> Result<Vec<MaterialRecord>> {
    if n_materials == 0 {
        return Err(Error::contract("n_materials must be at least 1"));
    }
    let (lo, hi) = atoms_range;
    if lo == 0 || lo > hi {
        return Err(Error::contract(format!("invalid atoms range {lo}..={hi}")));
    }
    params.validate()?;
    let l = params.cell_length;
    let min_sep = params.min_separation.max(0.1 * params.potential.sigma);
    let cell = params.cell();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_materials);
    while out.len() < n_materials {
        let n = rng.gen_range(lo..=hi);
        let Some(cart) = place_atoms(&mut rng, n, l, min_sep) else {
            continue;
        };
        let numbers = (0..n)
            .map(|_| *params.elements.choose(&mut rng).expect("non-empty"))
            .collect();
        let (energy, forces, stress) = lj_energy_forces_stress(&cart, l, &params.potential);
        let frac = cart
            .iter()
            .map(|r| [r[0] / l, r[1] / l, r[2] / l])
            .collect();
        out.push(MaterialRecord {
            atomic_numbers: numbers,
            cart,
            frac,
            cell,
            energy,
            forces,
            stress,
        });
    }
    Ok(out)
}

/// Random sequential placement; atoms closer than `min_sep` are resampled.
fn place_atoms(rng: &mut ChaCha8Rng, n: usize, l: f64, min_sep: f64) -> Option<Vec<Vec3>> {
    let mut cart: Vec<Vec3> = Vec::with_capacity(n);
    let mut attempts = 0;
    while cart.len() < n {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return None;
        }
        let p = [
            rng.gen_range(0.0..l),
            rng.gen_range(0.0..l),
            rng.gen_range(0.0..l),
        ];
        let ok = cart.iter().all(|q| {
            let d = displacement(&p, q, l);
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() >= min_sep
        });
        if ok {
            cart.push(p);
        }
    }
    Some(cart)
}
