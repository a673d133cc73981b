use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::tensor::Tensor;

/// Global L2 norm of a gradient set.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescale all gradients together so their global norm is at most
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold {
        let s = threshold / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "adam(beta1={}, beta2={}, eps={})",
            self.beta1, self.beta2, self.eps
        )
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter().enumerate() {
            let p = params.value_mut(id);
            if p.len() != g.len() {
                return Err(Error::contract(format!(
                    "gradient {id} has {} values, parameter {}",
                    g.len(),
                    p.len()
                )));
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn small_gradients_untouched() {
        let mut g = vec![Tensor::row(&[3.0, 4.0])];
        assert_eq!(clip_gradients(&mut g, 100.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
    }

    #[test]
    fn large_gradients_halved() {
        let mut g = vec![Tensor::row(&[120.0]), Tensor::row(&[160.0])];
        assert_eq!(clip_gradients(&mut g, 100.0), 200.0);
        assert_eq!(g[0].data(), &[60.0]);
        assert_eq!(g[1].data(), &[80.0]);
        assert!((global_norm(&g) - 100.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(values in proptest::collection::vec(-1e3..1e3f64, 1..40), t in 0.1..500.0f64) {
            let mut g = vec![Tensor::row(&values)];
            clip_gradients(&mut g, t);
            prop_assert!(global_norm(&g) <= t * (1.0 + 1e-12));
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // bias-corrected first step: update = lr·g/(|g| + eps)
        let mut store = ParamStore::from_params(vec![crate::models::Param {
            name: "w".into(),
            value: Tensor::row(&[1.0, -2.0]),
            embedding: false,
        }]);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[Tensor::row(&[0.5, -4.0])], 0.1)
            .unwrap();
        let w = store.get(0).value.data();
        assert!((w[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((w[1] - (-2.0 + 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(adam.t, 1);
        assert!(adam.step(&mut store, &[], 0.1).is_err());
    }
}
