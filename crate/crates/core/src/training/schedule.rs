use crate::error::{Error, Result};

/// Fraction of `max_lr` at step 0.
pub const INITIAL_FRACTION: f64 = 0.2;
/// Fraction of all steps spent warming up.
pub const WARMUP_FRACTION: f64 = 0.01;
/// Fraction of `max_lr` at the last step.
pub const FINAL_FRACTION: f64 = 0.01;

pub fn warmup_steps(total_steps: usize) -> usize {
    ((WARMUP_FRACTION * total_steps as f64).round() as usize).max(1)
}

/// Linear warmup from `0.2·max_lr` to `max_lr`, then cosine decay to
/// `0.01·max_lr` at `total_steps`.
pub fn lr_at_step(step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::contract(format!(
            "step {step} outside [0, {total_steps}]"
        )));
    }
    let start = INITIAL_FRACTION * max_lr;
    let floor = FINAL_FRACTION * max_lr;
    let warmup = warmup_steps(total_steps);
    if step == total_steps {
        return Ok(floor);
    }
    if step <= warmup {
        return Ok(start + (max_lr - start) * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(floor + 0.5 * (max_lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stated_values() {
        let total = 5000;
        assert!((lr_at_step(0, total, 6e-4).unwrap() - 1.2e-4).abs() < 1e-12);
        assert!((lr_at_step(50, total, 6e-4).unwrap() - 6e-4).abs() < 1e-12);
        assert!((lr_at_step(total, total, 6e-4).unwrap() - 6e-6).abs() < 1e-12);
        assert!((lr_at_step(50 + 2475, total, 6e-4).unwrap() - 3.03e-4).abs() < 1e-12);
    }

    #[test]
    fn continuous_at_junction_and_monotone_after() {
        let total = 10_000;
        let w = warmup_steps(total);
        let before = lr_at_step(w, total, 1.0).unwrap();
        let after = lr_at_step(w + 1, total, 1.0).unwrap();
        assert_eq!(before, 1.0);
        assert!((after - 1.0).abs() < 1e-6);
        let mut prev = before;
        for s in w..=total {
            let lr = lr_at_step(s, total, 1.0).unwrap();
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn warmup_is_at_least_one_step() {
        assert_eq!(warmup_steps(10), 1);
        assert_eq!(warmup_steps(149), 1);
        assert_eq!(warmup_steps(150), 2);
        assert!(lr_at_step(11, 10, 1.0).is_err());
        assert!(lr_at_step(0, 0, 1.0).is_err());
    }
}
