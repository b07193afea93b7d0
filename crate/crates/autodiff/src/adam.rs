//! Adam optimizer with bias correction.

use crate::nn::{ParamId, ParamStore};
use ndarray::ArrayD;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
        }
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Restore the step counter (used when resuming from a checkpoint).
    pub fn set_t(&mut self, t: u64) {
        self.t = t;
    }

    /// Apply one update with the given per-parameter gradients.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, ArrayD<f64>)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads {
            let slot = store.moments_mut(*id);
            if slot.is_none() {
                *slot = Some((ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim())));
            }
            let (m, v) = slot.as_mut().unwrap();
            let mut delta = g.clone();
            ndarray::Zip::from(&mut delta)
                .and(m)
                .and(v)
                .for_each(|d, m, v| {
                    let g = *d;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *d = self.lr * mhat / (vhat.sqrt() + self.eps);
                });
            *store.value_mut(*id) -= &delta;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_is_signed_learning_rate() {
        // With zero moment state, m_hat/sqrt(v_hat) == sign(g) up to eps.
        let mut store = ParamStore::new();
        let p = store.add("x", ArrayD::zeros(IxDyn(&[1])));
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        let g = ArrayD::from_elem(IxDyn(&[1]), -6.0);
        opt.step(&mut store, &[(p, g)]);
        let x = store.value(p);
        assert!((x[[0]] - 0.1).abs() < 1e-6, "got {}", x[[0]]);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut store = ParamStore::new();
        let p = store.add("x", ArrayD::zeros(IxDyn(&[1])));
        let mut opt = Adam::new(0.05, 0.9, 0.999);
        for _ in 0..2000 {
            let x = store.value(p)[[0]];
            let g = ArrayD::from_elem(IxDyn(&[1]), 2.0 * (x - 3.0));
            opt.step(&mut store, &[(p, g)]);
        }
        let x = store.value(p)[[0]];
        assert!((x - 3.0).abs() < 1e-2, "did not converge: {x}");
    }
}
