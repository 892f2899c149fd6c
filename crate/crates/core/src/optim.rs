//! Adam with bias correction, shared by field training, pose optimization and
//! the trajectory optimizer.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Advances the moment estimates with `grad` and writes the bias-corrected
    /// step `lr * m_hat / (sqrt(v_hat) + eps)` into `out`. The caller subtracts it.
    pub fn direction(&mut self, grad: &[f64], lr: f64, out: &mut [f64]) {
        assert_eq!(grad.len(), self.m.len());
        assert_eq!(out.len(), self.m.len());
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((m, v), g), o) in self.m.iter_mut().zip(&mut self.v).zip(grad).zip(out) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *o = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }

    /// In-place descent step on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((m, v), g), p) in self.m.iter_mut().zip(&mut self.v).zip(grad).zip(params) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut adam = Adam::new(3, AdamParams::default());
        let mut p = [1.0, -2.0, 0.5];
        adam.step(&mut p, &[10.0, -0.001, 3.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-4);
        assert!((p[2] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_gives_zero_step() {
        let mut adam = Adam::new(2, AdamParams::default());
        let mut out = [1.0; 2];
        adam.direction(&[0.0, 0.0], 0.5, &mut out);
        assert_eq!(out, [0.0, 0.0]);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(2, AdamParams::default());
        let mut p = [3.0, -4.0];
        for _ in 0..5000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)];
            adam.step(&mut p, &g, 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 2.0).abs() < 1e-3);
    }
}
