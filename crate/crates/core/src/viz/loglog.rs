use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaling::PowerLawFit;

use super::escape;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 600.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 410.0;

const COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// One labelled series of `(x, y)` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

/// Whole decades covering `[lo, hi]`, as exponents.
fn decades(lo: f64, hi: f64) -> (i32, i32) {
    // tolerate log10 landing a hair off an exact power of ten
    let a = (lo.log10() + 1e-9).floor() as i32;
    let mut b = (hi.log10() - 1e-9).ceil() as i32;
    if b <= a {
        b = a + 1;
    }
    (a, b)
}

struct Axes {
    x: (i32, i32),
    y: (i32, i32),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x.log10() - self.x.0 as f64) / (self.x.1 - self.x.0) as f64 * (RIGHT - LEFT)
    }

    fn py(&self, y: f64) -> f64 {
        BOTTOM - (y.log10() - self.y.0 as f64) / (self.y.1 - self.y.0) as f64 * (BOTTOM - TOP)
    }
}

fn check(curves: &[Curve]) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::contract("log-log plot needs at least one curve"));
    }
    for c in curves {
        if c.points.is_empty() {
            return Err(Error::contract(format!(
                "curve `{}` has no points",
                c.label
            )));
        }
        if let Some(&(x, y)) = c
            .points
            .iter()
            .find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite()))
        {
            return Err(Error::contract(format!(
                "curve `{}` has a non-positive value ({x}, {y}); log axes need positive data",
                c.label
            )));
        }
    }
    Ok(())
}

/// Log-log SVG with decade ticks, one polyline per curve and, when given,
/// the fitted power law as a straight line with its constants in the legend.
pub fn emit_loglog_plot(
    curves: &[Curve],
    x_label: &str,
    y_label: &str,
    fit: Option<&PowerLawFit>,
) -> Result<String> {
    check(curves)?;
    let all = curves.iter().flat_map(|c| c.points.iter().copied());
    let (x_lo, x_hi) = all
        .clone()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (x, _)| {
            (lo.min(x), hi.max(x))
        });
    let (mut y_lo, mut y_hi) = all.fold((f64::INFINITY, 0.0f64), |(lo, hi), (_, y)| {
        (lo.min(y), hi.max(y))
    });
    let fit_ends = fit.map(|f| [(x_lo, f.predict(x_lo)), (x_hi, f.predict(x_hi))]);
    if let Some(ends) = fit_ends {
        for (_, y) in ends.iter().filter(|(_, y)| *y > 0.0 && y.is_finite()) {
            y_lo = y_lo.min(*y);
            y_hi = y_hi.max(*y);
        }
    }
    let axes = Axes {
        x: decades(x_lo, x_hi),
        y: decades(y_lo, y_hi),
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.0}\" height=\"{:.0}\" fill=\"none\" stroke=\"black\"/>",
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    for e in axes.x.0..=axes.x.1 {
        let x = axes.px(10f64.powi(e));
        let _ = writeln!(
            out,
            "<line class=\"xtick\" x1=\"{x:.3}\" y1=\"{BOTTOM}\" x2=\"{x:.3}\" y2=\"{:.0}\" stroke=\"black\"/><text x=\"{x:.3}\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"11\">1e{e}</text>",
            BOTTOM + 6.0,
            BOTTOM + 20.0
        );
    }
    for e in axes.y.0..=axes.y.1 {
        let y = axes.py(10f64.powi(e));
        let _ = writeln!(
            out,
            "<line class=\"ytick\" x1=\"{:.0}\" y1=\"{y:.3}\" x2=\"{LEFT}\" y2=\"{y:.3}\" stroke=\"black\"/><text x=\"{:.0}\" y=\"{:.3}\" text-anchor=\"end\" font-size=\"11\">1e{e}</text>",
            LEFT - 6.0,
            LEFT - 9.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        (LEFT + RIGHT) / 2.0,
        HEIGHT - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"20\" y=\"{0:.0}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 20 {0:.0})\">{1}</text>",
        (TOP + BOTTOM) / 2.0,
        escape(y_label)
    );

    let mut legend = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|&(x, y)| format!("{:.3},{:.3}", axes.px(x), axes.py(y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline class=\"curve\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
        legend.push((color, "none", c.label.clone()));
    }
    if let (Some(f), Some([a, b])) = (fit, fit_ends) {
        let _ = writeln!(
            out,
            "<line class=\"fit\" x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"black\" stroke-dasharray=\"6,4\"/>",
            axes.px(a.0),
            axes.py(a.1),
            axes.px(b.0),
            axes.py(b.1)
        );
        legend.push((
            "black",
            "6,4",
            format!(
                "fit: L = {:.4e} · {}^(-{:.4}), α = {:.4e}, β = {:.4}, r² = {:.4}",
                f.alpha, f.axis, f.beta, f.alpha, f.beta, f.r_squared
            ),
        ));
    }
    for (i, (color, dash, label)) in legend.iter().enumerate() {
        let y = TOP + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{:.0}\" y1=\"{y:.0}\" x2=\"{:.0}\" y2=\"{y:.0}\" stroke=\"{color}\" stroke-dasharray=\"{dash}\"/><text class=\"legend\" x=\"{:.0}\" y=\"{:.0}\" font-size=\"11\">{}</text>",
            LEFT + 10.0,
            LEFT + 30.0,
            LEFT + 36.0,
            y + 4.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// The plotted points as CSV with columns `curve,x,y`.
pub fn loglog_csv(curves: &[Curve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["curve", "x", "y"])?;
    for c in curves {
        for (x, y) in &c.points {
            w.write_record([c.label.clone(), x.to_string(), y.to_string()])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::contract(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::fit_power_law;
    use crate::viz::xml_check::well_formed;

    fn law(alpha: f64, beta: f64, xs: &[f64]) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, alpha * x.powf(-beta))).collect()
    }

    fn attr(tag: &str, name: &str) -> String {
        let s = tag.split(&format!(" {name}=\"")).nth(1).unwrap();
        s[..s.find('"').unwrap()].to_string()
    }

    #[test]
    fn exact_curve_lies_on_fit_line() {
        let pts = law(4.99e5, 0.339, &[1e13, 3e13, 1e14, 1e15, 7e15, 1e17]);
        let fit = fit_power_law(&pts).unwrap();
        let svg = emit_loglog_plot(&[Curve::new("frontier", pts)], "C", "L", Some(&fit)).unwrap();
        let line = svg.lines().find(|l| l.contains("class=\"fit\"")).unwrap();
        let [x1, y1, x2, y2] =
            ["x1", "y1", "x2", "y2"].map(|n| attr(line, n).parse::<f64>().unwrap());
        let poly = svg.lines().find(|l| l.contains("class=\"curve\"")).unwrap();
        let (dx, dy) = (x2 - x1, y2 - y1);
        let len = (dx * dx + dy * dy).sqrt();
        for p in attr(poly, "points").split(' ') {
            let (x, y) = p.split_once(',').unwrap();
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            let dist = ((x - x1) * dy - (y - y1) * dx).abs() / len;
            assert!(dist <= 1.0, "{dist}");
        }
        assert_eq!(svg.matches("class=\"xtick\"").count(), 5);
    }

    #[test]
    fn two_curves_two_legends() {
        let a = Curve::new("D = 256", law(10.0, 0.2, &[1e4, 1e5, 1e6]));
        let b = Curve::new("D = 1024", law(8.0, 0.2, &[1e4, 1e5, 1e6]));
        let svg = emit_loglog_plot(&[a, b], "P", "L", None).unwrap();
        assert_eq!(svg.matches("class=\"curve\"").count(), 2);
        assert_eq!(svg.matches("class=\"legend\"").count(), 2);
        well_formed(&svg).unwrap();
    }

    #[test]
    fn fit_legend_and_escaping() {
        let pts = law(2.0, 0.5, &[1.0, 10.0, 100.0]);
        let fit = fit_power_law(&pts).unwrap();
        let svg =
            emit_loglog_plot(&[Curve::new("a<b & c", pts.clone())], "N", "L", Some(&fit)).unwrap();
        well_formed(&svg).unwrap();
        assert!(svg.contains("a&lt;b &amp; c"));
        assert!(svg.contains("β = 0.5000"));
        assert_eq!(
            svg,
            emit_loglog_plot(&[Curve::new("a<b & c", pts)], "N", "L", Some(&fit)).unwrap()
        );
    }

    #[test]
    fn non_positive_values_name_the_curve() {
        let bad = Curve::new("broken", vec![(1.0, 1.0), (2.0, 0.0)]);
        let err = emit_loglog_plot(&[bad], "x", "y", None).unwrap_err();
        assert!(err.to_string().contains("broken"), "{err}");
    }

    #[test]
    fn companion_csv() {
        let csv = loglog_csv(&[Curve::new("c", vec![(1.0, 2.0), (10.0, 0.5)])]).unwrap();
        assert_eq!(csv, "curve,x,y\nc,1,2\nc,10,0.5\n");
    }
}
