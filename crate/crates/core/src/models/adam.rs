use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected update of `params` against `grads`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_closed_form() {
        let mut s = AdamState::new(1, 1e-3);
        let mut p = [0.0];
        s.update(&mut p, &[1.0]);
        // m̂ = 1, v̂ = 1.
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_no_change() {
        let mut s = AdamState::new(3, 1e-3);
        let mut p = [1.0, -2.0, 3.0];
        s.update(&mut p, &[0.0; 3]);
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    proptest! {
        #[test]
        // Beyond |g| ≈ 1e154 the second moment overflows and no step is taken.
        fn first_step_opposes_gradient(mag in -100.0f64..100.0, neg in any::<bool>()) {
            let g = if neg { -(10f64.powf(mag)) } else { 10f64.powf(mag) };
            let mut s = AdamState::new(1, 1e-3);
            let mut p = [0.0];
            s.update(&mut p, &[g]);
            prop_assert!(p[0] != 0.0);
            prop_assert_eq!(p[0].signum(), -g.signum());
        }
    }
}
