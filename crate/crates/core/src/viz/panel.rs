use std::fmt::Write;

use crate::data::{Mat3, MaterialRecord, Vec3};
use crate::error::{Error, Result};
use crate::models::EFSPrediction;

use super::escape;

const PANEL_W: f64 = 400.0;
const PANEL_H: f64 = 440.0;
// drawing box inside a panel
const BOX_X: (f64, f64) = (30.0, 370.0);
const BOX_Y: (f64, f64) = (60.0, 350.0);
const R_MIN: f64 = 3.0;
const R_MAX: f64 = 8.0;

/// The longest force arrow spans this fraction of the panel width.
pub const ARROW_FRACTION: f64 = 0.15;

const PALETTE: [&str; 8] = [
    "#4e79a7", "#59a14f", "#edc948", "#b07aa1", "#76b7b2", "#9c755f", "#bab0ac", "#f28e2b",
];

/// Orthographic view dropping z. Depth becomes the circle radius.
struct Projection {
    x0: f64,
    y0: f64,
    scale: f64,
    z_lo: f64,
    z_span: f64,
}

impl Projection {
    fn fit(cart: &[Vec3]) -> Self {
        let bounds = |k: usize| {
            let lo = cart.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = cart.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            if cart.is_empty() {
                (0.0, 0.0)
            } else {
                (lo, hi)
            }
        };
        let ((xl, xh), (yl, yh), (zl, zh)) = (bounds(0), bounds(1), bounds(2));
        let pad = 0.5;
        let (xr, yr) = (xh - xl + 2.0 * pad, yh - yl + 2.0 * pad);
        let scale = ((BOX_X.1 - BOX_X.0) / xr).min((BOX_Y.1 - BOX_Y.0) / yr);
        // centre the drawing in the box
        let x0 = (BOX_X.0 + BOX_X.1) / 2.0 - scale * (xl + xh) / 2.0;
        let y0 = (BOX_Y.0 + BOX_Y.1) / 2.0 + scale * (yl + yh) / 2.0;
        Self {
            x0,
            y0,
            scale,
            z_lo: zl,
            z_span: zh - zl,
        }
    }

    fn point(&self, r: &Vec3) -> (f64, f64) {
        (self.x0 + self.scale * r[0], self.y0 - self.scale * r[1])
    }

    fn radius(&self, z: f64) -> f64 {
        if self.z_span > 0.0 {
            R_MIN + (R_MAX - R_MIN) * (z - self.z_lo) / self.z_span
        } else {
            (R_MIN + R_MAX) / 2.0
        }
    }
}

fn magnitude(f: &Vec3) -> f64 {
    (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt()
}

/// What one panel shows; geometry is shared between the two.
struct Labels<'a> {
    title: &'a str,
    forces: &'a [Vec3],
    energy: f64,
    stress: &'a Mat3,
}

fn panel(
    out: &mut String,
    offset: f64,
    rec: &MaterialRecord,
    proj: &Projection,
    px_per_force: Option<f64>,
    labels: Labels,
) {
    let Labels {
        title,
        forces,
        energy,
        stress,
    } = labels;
    let _ = writeln!(
        out,
        "<g class=\"panel\" transform=\"translate({offset:.0},0)\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{PANEL_W:.0}\" height=\"{PANEL_H:.0}\" fill=\"white\" stroke=\"#999\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"200\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
        escape(title)
    );
    let scale_note = match px_per_force {
        Some(k) => format!("force arrows: {k:.3} px per eV/Å"),
        None => "force arrows: none".to_string(),
    };
    let _ = writeln!(
        out,
        "<text x=\"200\" y=\"44\" text-anchor=\"middle\" font-size=\"11\">{scale_note}</text>"
    );
    for (i, (r, &z)) in rec.cart.iter().zip(&rec.atomic_numbers).enumerate() {
        let (x, y) = proj.point(r);
        let _ = writeln!(
            out,
            "<circle class=\"atom\" cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{:.3}\" fill=\"{}\" stroke=\"black\" stroke-width=\"0.5\"><title>atom {i} Z={z}</title></circle>",
            proj.radius(r[2]),
            PALETTE[z as usize % PALETTE.len()]
        );
    }
    if let Some(k) = px_per_force {
        for (r, f) in rec.cart.iter().zip(forces) {
            if *f == [0.0; 3] {
                continue;
            }
            let (x, y) = proj.point(r);
            let _ = writeln!(
                out,
                "<line class=\"force\" x1=\"{x:.3}\" y1=\"{y:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"red\" stroke-width=\"1.5\" marker-end=\"url(#arrowhead)\"/>",
                x + k * f[0],
                y - k * f[1]
            );
        }
    }
    for (row, s) in stress.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text class=\"stress\" x=\"10\" y=\"{}\" font-size=\"11\" font-family=\"monospace\">{}[{:+.4} {:+.4} {:+.4}]</text>",
            384 + 16 * row,
            if row == 0 { "σ " } else { "  " },
            s[0],
            s[1],
            s[2]
        );
    }
    let _ = writeln!(
        out,
        "<text class=\"energy\" x=\"390\" y=\"416\" text-anchor=\"end\" font-size=\"12\">E = {energy:.4} eV</text>"
    );
    out.push_str("</g>\n");
}

/// Side-by-side SVG of a material's labels (left) and a prediction (right).
///
/// Atoms are drawn at their xy positions with depth as radius. Forces are
/// red arrows with one shared scale chosen so the longest arrow in either
/// panel spans [`ARROW_FRACTION`] of the panel width; the scale is printed.
/// Stress is written bottom-left, energy bottom-right.
pub fn render_material_panel(actual: &MaterialRecord, predicted: &EFSPrediction) -> Result<String> {
    if predicted.forces.len() != actual.n_atoms() {
        return Err(Error::contract(format!(
            "prediction has {} atoms, material has {}",
            predicted.forces.len(),
            actual.n_atoms()
        )));
    }
    let proj = Projection::fit(&actual.cart);
    let longest = actual
        .forces
        .iter()
        .chain(&predicted.forces)
        .map(magnitude)
        .fold(0.0, f64::max);
    let px_per_force =
        (longest > 0.0 && longest.is_finite()).then(|| ARROW_FRACTION * PANEL_W / longest);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{PANEL_H:.0}\" viewBox=\"0 0 {w:.0} {PANEL_H:.0}\">",
        w = 2.0 * PANEL_W
    );
    out.push_str(
        "<defs><marker id=\"arrowhead\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"red\"/></marker></defs>\n",
    );
    let truth = Labels {
        title: "actual",
        forces: &actual.forces,
        energy: actual.energy,
        stress: &actual.stress,
    };
    panel(&mut out, 0.0, actual, &proj, px_per_force, truth);
    let model = Labels {
        title: "predicted",
        forces: &predicted.forces,
        energy: predicted.energy,
        stress: &predicted.stress,
    };
    panel(&mut out, PANEL_W, actual, &proj, px_per_force, model);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticParams};
    use crate::viz::xml_check::well_formed;

    fn three_atoms() -> MaterialRecord {
        let mut r = generate_synthetic(1, (3, 3), 5, &SyntheticParams::default())
            .unwrap()
            .remove(0);
        assert_eq!(r.n_atoms(), 3);
        r.forces[1] = [0.0; 3];
        r
    }

    fn panels(svg: &str) -> Vec<&str> {
        svg.split("<g class=\"panel\"").skip(1).collect()
    }

    #[test]
    fn counts_atoms_and_arrows() {
        let r = three_atoms();
        let svg = render_material_panel(&r, &EFSPrediction::from_record(&r)).unwrap();
        well_formed(&svg).unwrap();
        assert_eq!(svg.matches("class=\"atom\"").count(), 6);
        // one atom carries no force in either panel
        assert_eq!(svg.matches("class=\"force\"").count(), 4);
    }

    #[test]
    fn zero_forces_draw_no_arrows() {
        let mut r = three_atoms();
        r.forces = vec![[0.0; 3]; 3];
        let svg = render_material_panel(&r, &EFSPrediction::zeros(3)).unwrap();
        assert_eq!(svg.matches("class=\"force\"").count(), 0);
        well_formed(&svg).unwrap();
    }

    #[test]
    fn identical_inputs_give_identical_panels() {
        let r = three_atoms();
        let svg = render_material_panel(&r, &EFSPrediction::from_record(&r)).unwrap();
        let p = panels(&svg);
        let body = |s: &str| {
            s.split_once('>')
                .unwrap()
                .1
                .replace("predicted", "actual")
                .replace("</svg>\n", "")
        };
        assert_eq!(body(p[0]), body(p[1]));
        assert_eq!(
            svg,
            render_material_panel(&r, &EFSPrediction::from_record(&r)).unwrap()
        );
    }

    #[test]
    fn longest_arrow_spans_fixed_fraction() {
        let r = three_atoms();
        let mut pred = EFSPrediction::from_record(&r);
        pred.forces[0] = [7.0, 0.0, 0.0];
        let svg = render_material_panel(&r, &pred).unwrap();
        let predicted = panels(&svg)[1];
        let line = predicted
            .lines()
            .find(|l| l.contains("class=\"force\""))
            .unwrap();
        let attr = |name: &str| -> f64 {
            let s = line.split(&format!(" {name}=\"")).nth(1).unwrap();
            s[..s.find('"').unwrap()].parse().unwrap()
        };
        let len = attr("x2") - attr("x1");
        assert!((len - ARROW_FRACTION * PANEL_W).abs() < 1e-2, "{len}");
    }

    #[test]
    fn mismatched_atoms_rejected() {
        let r = three_atoms();
        assert!(render_material_panel(&r, &EFSPrediction::zeros(2)).is_err());
    }
}
