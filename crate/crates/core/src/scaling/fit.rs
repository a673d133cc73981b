use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `L = alpha · N^(−beta)` fitted by least squares on `(ln N, ln L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    /// Positive when loss falls as the axis grows.
    pub beta: f64,
    pub r_squared: f64,
    /// Axis name, e.g. `D`, `P` or `C`.
    pub axis: String,
    pub n_points: usize,
    pub points: Vec<(f64, f64)>,
    /// Which loss the points hold, e.g. best validation total.
    pub loss: String,
    /// Runs left out of the fit, with reasons.
    pub exclusions: Vec<String>,
}

impl PowerLawFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.alpha * n.powf(-self.beta)
    }
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::contract(format!(
            "power-law fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(n, l)) = points
        .iter()
        .find(|(n, l)| !(*n > 0.0 && *l > 0.0 && n.is_finite() && l.is_finite()))
    {
        return Err(Error::contract(format!(
            "power-law fit needs positive finite values, got ({n}, {l})"
        )));
    }
    if points.iter().all(|p| p.0 == points[0].0) {
        return Err(Error::contract(
            "power-law fit needs at least two distinct axis values",
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = points.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    // a flat line is reproduced exactly, so its fit is perfect
    let r_squared = if syy <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        alpha: intercept.exp(),
        beta: -slope,
        r_squared,
        axis: "N".into(),
        n_points: points.len(),
        points: points.to_vec(),
        loss: String::new(),
        exclusions: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn exact(alpha: f64, beta: f64, ns: &[f64]) -> Vec<(f64, f64)> {
        ns.iter().map(|&n| (n, alpha * n.powf(-beta))).collect()
    }

    #[test]
    fn recovers_data_law() {
        let f = fit_power_law(&exact(64.7, 0.242, &[1e3, 1e4, 1e5, 1e6])).unwrap();
        assert!((f.alpha - 64.7).abs() / 64.7 < 1e-9);
        assert!((f.beta - 0.242).abs() / 0.242 < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_loss_gives_zero_exponent() {
        let f = fit_power_law(&[(10.0, 3.0), (100.0, 3.0), (1000.0, 3.0)]).unwrap();
        assert!(f.beta.abs() < 1e-12);
        assert!((f.alpha - 3.0).abs() < 1e-12);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.0), (3.0, 0.2)]).is_err());
        assert!(fit_power_law(&[(-1.0, 1.0), (2.0, 1.0), (3.0, 0.2)]).is_err());
        assert!(fit_power_law(&[(5.0, 1.0), (5.0, 2.0), (5.0, 3.0)]).is_err());
    }

    #[test]
    fn three_collinear_points_have_no_residual() {
        let f = fit_power_law(&exact(2.0, 0.7, &[3.0, 30.0, 300.0])).unwrap();
        for &(n, l) in &f.points {
            assert!((f.predict(n) - l).abs() / l < 1e-12);
        }
    }

    #[test]
    fn noisy_params_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let p = 1e4 * 10f64.powf(i as f64 / 10.0);
                (
                    p,
                    776.0 * p.powf(-0.383) * (1.0 + rng.gen_range(-0.01..0.01)),
                )
            })
            .collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.beta - 0.383).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn exact_for_any_law(alpha in 1e-3..1e6f64, beta in -2.0..2.0f64) {
            let f = fit_power_law(&exact(alpha, beta, &[2.0, 20.0, 150.0, 4000.0])).unwrap();
            prop_assert!((f.alpha - alpha).abs() / alpha < 1e-9);
            prop_assert!((f.beta - beta).abs() < 1e-9);
        }

        #[test]
        fn scale_equivariance(c in 0.01..100.0f64, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (1..6).map(|i| (i as f64 * 10.0, rng.gen_range(0.5..5.0))).collect();
            let base = fit_power_law(&pts).unwrap();
            let scaled_l: Vec<_> = pts.iter().map(|&(n, l)| (n, c * l)).collect();
            let f = fit_power_law(&scaled_l).unwrap();
            prop_assert!((f.alpha - c * base.alpha).abs() <= 1e-12 * f.alpha.max(1.0) * 100.0);
            prop_assert!((f.beta - base.beta).abs() < 1e-12);
            let scaled_n: Vec<_> = pts.iter().map(|&(n, l)| (c * n, l)).collect();
            prop_assert!((fit_power_law(&scaled_n).unwrap().beta - base.beta).abs() < 1e-12);
        }
    }
}
