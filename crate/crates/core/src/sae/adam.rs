use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment state for one flat parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    t: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Adam {
            params,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f32], grad: &[f32]) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let step = (learning_rate / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (beta1 as f32, beta2 as f32, epsilon as f32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            theta[i] -= step * self.m[i] / (self.v[i].sqrt() / bc2_sqrt + eps);
        }
    }

    /// Zeroes the moments of `len` consecutive entries starting at `start`.
    pub fn reset_range(&mut self, start: usize, len: usize) {
        self.m[start..start + len].fill(0.0);
        self.v[start..start + len].fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut adam = Adam::new(3, AdamParams::default());
        let mut theta = vec![0.0f32, 1.0, -1.0];
        adam.step(&mut theta, &[2.0, -0.5, 0.0]);
        assert!((theta[0] + 1e-3).abs() < 1e-6);
        assert!((theta[1] - (1.0 + 1e-3)).abs() < 1e-6);
        assert_eq!(theta[2], -1.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let params = AdamParams {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut adam = Adam::new(2, params);
        let mut theta = vec![3.0f32, -2.0];
        for _ in 0..2000 {
            let grad: Vec<f32> = theta.iter().map(|t| 2.0 * (t - 0.5)).collect();
            adam.step(&mut theta, &grad);
        }
        assert!(theta.iter().all(|t| (t - 0.5).abs() < 1e-2));
    }
}
