use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment accumulators for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self { config, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// One bias-corrected update, descending along `grads`.
    pub fn step(&mut self, weights: &mut [f64], grads: &[f64]) {
        assert_eq!(weights.len(), self.m.len(), "adam: weight length changed");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient length mismatch");
        self.t += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((w, &g), m), v) in weights.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut w = vec![1.0, -2.0, 0.5];
        state.step(&mut w, &[0.0; 3]);
        assert_eq!(w, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_is_learning_rate_times_sign() {
        let cfg = AdamConfig::default();
        let g = [3.0, -0.01, 250.0, -7.5];
        let mut state = AdamState::new(4, cfg);
        let mut w = vec![0.0; 4];
        state.step(&mut w, &g);
        for (wi, gi) in w.iter().zip(&g) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            let expected = -cfg.learning_rate * gi / (gi.abs() + cfg.epsilon);
            assert!((wi - expected).abs() < 1e-15);
            assert!((wi.abs() - cfg.learning_rate).abs() < cfg.learning_rate * 1e-5);
        }
    }

    #[test]
    fn doubling_gradient_keeps_first_step_direction() {
        let g = [0.2, -1.5, 4.0, -1e-3];
        let mut a = AdamState::new(4, AdamConfig::default());
        let mut b = AdamState::new(4, AdamConfig::default());
        let mut wa = vec![0.0; 4];
        let mut wb = vec![0.0; 4];
        a.step(&mut wa, &g);
        b.step(&mut wb, &g.map(|x| 2.0 * x));
        for (x, y) in wa.iter().zip(&wb) {
            assert_eq!(x.signum(), y.signum());
        }
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x) = sum c_i (x_i - m_i)^2
        let c = [1.0, 4.0, 0.25, 2.0];
        let target = [0.3, -0.7, 0.9, -0.1];
        let mut state = AdamState::new(4, AdamConfig { learning_rate: 0.05, ..AdamConfig::default() });
        let mut x = vec![0.0; 4];
        for _ in 0..200 {
            let g: Vec<f64> = (0..4).map(|i| 2.0 * c[i] * (x[i] - target[i])).collect();
            state.step(&mut x, &g);
        }
        for (xi, ti) in x.iter().zip(&target) {
            assert!((xi - ti).abs() < 1e-3, "{xi} vs {ti}");
        }
    }
}
