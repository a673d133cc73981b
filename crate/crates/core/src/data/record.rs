use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lattice::{self, Mat3, Vec3};

/// Rows of the element embedding table, hydrogen through oganesson.
pub const DEFAULT_MAX_NUM_ELEMENTS: usize = 118;

/// One atomic structure with its energy, force and stress labels.
///
/// Units: positions and cell in Å, energy in eV, forces in eV/Å, stress in
/// eV/Å³ with compressive (repulsive) stress counted positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub atomic_numbers: Vec<u32>,
    pub cart: Vec<Vec3>,
    pub frac: Vec<Vec3>,
    pub cell: Mat3,
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub stress: Mat3,
}

impl MaterialRecord {
    /// Build a record, deriving fractional coordinates from the cell.
    pub fn new(
        atomic_numbers: Vec<u32>,
        cart: Vec<Vec3>,
        cell: Mat3,
        energy: f64,
        forces: Vec<Vec3>,
        stress: Mat3,
    ) -> Result<Self> {
        let frac = lattice::to_fractional(&cart, &cell)?;
        let rec = Self {
            atomic_numbers,
            cart,
            frac,
            cell,
            energy,
            forces,
            stress,
        };
        rec.validate(DEFAULT_MAX_NUM_ELEMENTS)
            .map_err(|(field, msg)| Error::contract(format!("{field}: {msg}")))?;
        Ok(rec)
    }

    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn volume(&self) -> f64 {
        lattice::volume(&self.cell)
    }

    /// Check every record invariant, naming the offending field on failure.
    pub fn validate(
        &self,
        max_num_elements: usize,
    ) -> std::result::Result<(), (&'static str, String)> {
        let n = self.atomic_numbers.len();
        if n == 0 {
            return Err(("atomic_numbers", "at least one atom required".into()));
        }
        if let Some(z) = self
            .atomic_numbers
            .iter()
            .find(|&&z| z == 0 || z as usize > max_num_elements)
        {
            return Err((
                "atomic_numbers",
                format!("atomic number {z} outside [1, {max_num_elements}]"),
            ));
        }
        if self.cart.len() != n {
            return Err((
                "cart",
                format!("expected {n} positions, got {}", self.cart.len()),
            ));
        }
        if self.frac.len() != n {
            return Err((
                "frac",
                format!("expected {n} positions, got {}", self.frac.len()),
            ));
        }
        if self.forces.len() != n {
            return Err((
                "forces",
                format!("expected {n} vectors, got {}", self.forces.len()),
            ));
        }
        let finite3 = |v: &[Vec3]| v.iter().flatten().all(|x| x.is_finite());
        if !finite3(&self.cart) {
            return Err(("cart", "non-finite value".into()));
        }
        if !finite3(&self.forces) {
            return Err(("forces", "non-finite value".into()));
        }
        if !self.energy.is_finite() {
            return Err(("energy", "non-finite value".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                if !self.stress[i][j].is_finite() {
                    return Err(("stress", "non-finite value".into()));
                }
                if (self.stress[i][j] - self.stress[j][i]).abs() > 1e-10 {
                    return Err(("stress", "stress tensor is not symmetric".into()));
                }
            }
        }
        let recon = lattice::to_cartesian(&self.frac, &self.cell);
        for (a, b) in recon.iter().zip(&self.cart) {
            for k in 0..3 {
                if (a[k] - b[k]).abs() > 1e-8 {
                    return Err(("frac", "frac · cell does not reproduce cart".into()));
                }
            }
        }
        Ok(())
    }
}
