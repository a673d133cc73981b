//! Combined energy/force/stress loss and per-channel error metrics.
//!
//! Every channel is an L1 error. Stress enters twice: once through its
//! isotropic part `trace(S)/3` and once through the trace-free remainder.

use serde::{Deserialize, Serialize};

use crate::data::{Mat3, MaterialRecord};
use crate::error::{Error, Result};
use crate::models::{Batch, BatchOutput, EFSPrediction};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub energy: f64,
    pub force: f64,
    pub iso_stress: f64,
    pub aniso_stress: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            energy: 1.0,
            force: 1.0,
            iso_stress: 1.0,
            aniso_stress: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(energy: f64, force: f64, iso_stress: f64, aniso_stress: f64) -> Result<Self> {
        let w = Self {
            energy,
            force,
            iso_stress,
            aniso_stress,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.energy, self.force, self.iso_stress, self.aniso_stress]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config(format!(
                "loss weights must be finite and non-negative, got {w:?}"
            )));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::config("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// How the energy error is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    #[default]
    PerStructure,
    /// Divide the energy error by the structure's atom count.
    PerAtom,
}

/// Loss value with its unweighted per-channel terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub energy: f64,
    pub force: f64,
    pub iso: f64,
    pub aniso: f64,
}

impl LossBreakdown {
    pub fn from_terms(terms: [f64; 4], w: &LossWeights) -> Self {
        let [energy, force, iso, aniso] = terms;
        Self {
            total: w.energy * energy
                + w.force * force
                + w.iso_stress * iso
                + w.aniso_stress * aniso,
            energy,
            force,
            iso,
            aniso,
        }
    }

    pub fn terms(&self) -> [f64; 4] {
        [self.energy, self.force, self.iso, self.aniso]
    }

    /// Term-wise mean, with the total recomputed from the averaged terms.
    pub fn mean(items: &[LossBreakdown], w: &LossWeights) -> Self {
        let n = items.len().max(1) as f64;
        let mut acc = [0.0; 4];
        for it in items {
            for (a, t) in acc.iter_mut().zip(it.terms()) {
                *a += t;
            }
        }
        Self::from_terms(acc.map(|a| a / n), w)
    }
}

/// Split a symmetric stress into `trace/3` and the trace-free remainder.
pub fn decompose_stress(s: &Mat3) -> Result<(f64, Mat3)> {
    for i in 0..3 {
        for j in i + 1..3 {
            if (s[i][j] - s[j][i]).abs() > 1e-8 {
                return Err(Error::contract(format!(
                    "stress is not symmetric: [{i}][{j}] = {} vs [{j}][{i}] = {}",
                    s[i][j], s[j][i]
                )));
            }
        }
    }
    let iso = (s[0][0] + s[1][1] + s[2][2]) / 3.0;
    let mut aniso = *s;
    for (k, row) in aniso.iter_mut().enumerate() {
        row[k] -= iso;
    }
    Ok((iso, aniso))
}

fn check_atoms(pred: &EFSPrediction, target: &MaterialRecord) -> Result<()> {
    if pred.forces.len() != target.n_atoms() {
        return Err(Error::contract(format!(
            "prediction has {} force rows for a {}-atom target",
            pred.forces.len(),
            target.n_atoms()
        )));
    }
    Ok(())
}

fn force_mae(pred: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).abs()))
        .sum();
    sum / (3 * pred.len()).max(1) as f64
}

pub fn combined_loss(
    pred: &EFSPrediction,
    target: &MaterialRecord,
    weights: &LossWeights,
    mode: EnergyMode,
) -> Result<LossBreakdown> {
    check_atoms(pred, target)?;
    let mut energy = (pred.energy - target.energy).abs();
    if mode == EnergyMode::PerAtom {
        energy /= target.n_atoms() as f64;
    }
    let force = force_mae(&pred.forces, &target.forces);
    let (iso_p, aniso_p) = decompose_stress(&pred.stress)?;
    let (iso_t, aniso_t) = decompose_stress(&target.stress)?;
    let iso = (iso_p - iso_t).abs();
    let aniso = aniso_p
        .iter()
        .flatten()
        .zip(aniso_t.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 9.0;
    Ok(LossBreakdown::from_terms(
        [energy, force, iso, aniso],
        weights,
    ))
}

/// Mean of per-record losses.
pub fn batch_loss(
    preds: &[EFSPrediction],
    targets: &[MaterialRecord],
    weights: &LossWeights,
    mode: EnergyMode,
) -> Result<LossBreakdown> {
    if preds.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let items = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| combined_loss(p, t, weights, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&items, weights))
}

/// Mean absolute errors per channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub energy: f64,
    /// Over all atoms and components.
    pub force: f64,
    /// Over all 9 stress components.
    pub stress: f64,
}

pub fn error_metrics(pred: &EFSPrediction, target: &MaterialRecord) -> Result<ErrorMetrics> {
    batch_error_metrics(std::slice::from_ref(pred), std::slice::from_ref(target))
}

/// Metrics pooled over every scalar of the batch.
pub fn batch_error_metrics(
    preds: &[EFSPrediction],
    targets: &[MaterialRecord],
) -> Result<ErrorMetrics> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::contract(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let (mut e, mut f, mut s, mut n_f) = (0.0, 0.0, 0.0, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        check_atoms(p, t)?;
        e += (p.energy - t.energy).abs();
        for (pf, tf) in p.forces.iter().zip(&t.forces) {
            f += (0..3).map(|k| (pf[k] - tf[k]).abs()).sum::<f64>();
        }
        n_f += 3 * t.n_atoms();
        s += p
            .stress
            .iter()
            .flatten()
            .zip(t.stress.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    }
    let n = preds.len() as f64;
    Ok(ErrorMetrics {
        energy: e / n,
        force: f / n_f.max(1) as f64,
        stress: s / (9.0 * n),
    })
}

/// Differentiable batch loss: the total and the four unweighted terms.
#[derive(Clone, Copy, Debug)]
pub struct GraphLoss {
    pub total: Var,
    pub terms: [Var; 4],
}

impl GraphLoss {
    pub fn breakdown(&self, g: &Graph, weights: &LossWeights) -> LossBreakdown {
        let mut b = LossBreakdown::from_terms(self.terms.map(|t| g.value(t).item()), weights);
        b.total = g.value(self.total).item();
        b
    }
}

/// `[9, 1]` projector onto `trace/3` of a row-major 3×3.
fn iso_projector() -> Tensor {
    let mut t = vec![0.0; 9];
    for k in [0, 4, 8] {
        t[k] = 1.0 / 3.0;
    }
    Tensor::new(vec![9, 1], t).expect("projector shape")
}

/// `[9, 9]` projector removing the isotropic part.
fn aniso_projector() -> Tensor {
    let mut a = vec![0.0; 81];
    for k in 0..9 {
        a[k * 9 + k] = 1.0;
    }
    for k in [0, 4, 8] {
        for c in [0, 4, 8] {
            a[k * 9 + c] -= 1.0 / 3.0;
        }
    }
    Tensor::new(vec![9, 9], a).expect("projector shape")
}

/// The batch-mean combined loss on graph outputs, equal to [`batch_loss`]
/// on the same predictions.
pub fn graph_loss(
    g: &mut Graph,
    out: &BatchOutput,
    batch: &Batch,
    weights: &LossWeights,
    mode: EnergyMode,
) -> Result<GraphLoss> {
    let recs = batch.records();
    let b = recs.len() as f64;
    let per_structure = |f: &dyn Fn(&MaterialRecord) -> f64| {
        Tensor::new(vec![recs.len(), 1], recs.iter().map(|r| f(r)).collect()).expect("column shape")
    };

    let e_target = g.constant(per_structure(&|r| r.energy));
    let e_weight = g.constant(per_structure(&|r| match mode {
        EnergyMode::PerStructure => 1.0 / b,
        EnergyMode::PerAtom => 1.0 / (b * r.n_atoms() as f64),
    }));
    let diff = g.sub(out.energy, e_target)?;
    let diff = g.abs(diff);
    let weighted = g.mul(diff, e_weight)?;
    let energy = g.sum(weighted);

    let f_target = g.constant(batch.padded(|r| &r.forces));
    let mut fw = batch.force_weights();
    fw.data_mut().iter_mut().for_each(|w| *w /= b);
    let f_weight = g.constant(fw);
    let diff = g.sub(out.forces, f_target)?;
    let diff = g.abs(diff);
    let weighted = g.mul(diff, f_weight)?;
    let force = g.sum(weighted);

    let mut iso_t = Vec::with_capacity(recs.len());
    let mut aniso_t = Vec::with_capacity(recs.len() * 9);
    for r in recs {
        let (i, a) = decompose_stress(&r.stress)?;
        iso_t.push(i);
        aniso_t.extend(a.iter().flatten());
    }
    let iso_p = g.constant(iso_projector());
    let iso_pred = g.matmul(out.stress, iso_p)?;
    let iso_target = g.constant(Tensor::new(vec![recs.len(), 1], iso_t)?);
    let diff = g.sub(iso_pred, iso_target)?;
    let diff = g.abs(diff);
    let sum = g.sum(diff);
    let iso = g.scale(sum, 1.0 / b);

    let aniso_p = g.constant(aniso_projector());
    let aniso_pred = g.matmul(out.stress, aniso_p)?;
    let aniso_target = g.constant(Tensor::new(vec![recs.len(), 9], aniso_t)?);
    let diff = g.sub(aniso_pred, aniso_target)?;
    let diff = g.abs(diff);
    let sum = g.sum(diff);
    let aniso = g.scale(sum, 1.0 / (9.0 * b));

    let terms = [energy, force, iso, aniso];
    let mut total = g.scale(energy, weights.energy);
    for (t, w) in terms.iter().zip(weights.as_array()).skip(1) {
        let wt = g.scale(*t, w);
        total = g.add(total, wt)?;
    }
    Ok(GraphLoss { total, terms })
}
