use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::patterns::{check_k, n_pairs, n_params, CapturePattern};
use crate::error::{invalid, mismatch, Result};

/// Parameters of the log-linear model for K lists.
///
/// `gamma` is ordered (1,2), (1,3), ..., (K-1,K).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl ModelParams {
    pub fn new(k: usize, alpha: f64, beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        check_k(k)?;
        if beta.len() != k {
            return Err(mismatch(format!("expected {k} main effects, got {}", beta.len())));
        }
        if gamma.len() != n_pairs(k) {
            return Err(mismatch(format!("expected {} interactions, got {}", n_pairs(k), gamma.len())));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn zeros(k: usize) -> Self {
        Self { alpha: 0.0, beta: vec![0.0; k], gamma: vec![0.0; n_pairs(k)] }
    }

    pub fn k(&self) -> usize {
        self.beta.len()
    }

    pub fn dim(&self) -> usize {
        n_params(self.k())
    }

    /// Flat layout: `[alpha, beta_1..beta_K, gamma_12..gamma_{K-1,K}]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn from_slice(k: usize, flat: &[f64]) -> Result<Self> {
        check_k(k)?;
        if flat.len() != n_params(k) {
            return Err(mismatch(format!("expected {} parameters for K={k}, got {}", n_params(k), flat.len())));
        }
        Ok(Self { alpha: flat[0], beta: flat[1..1 + k].to_vec(), gamma: flat[1 + k..].to_vec() })
    }

    /// Column names matching [`ModelParams::to_vec`].
    pub fn names(k: usize) -> Vec<String> {
        let mut names = vec!["alpha".to_string()];
        names.extend((1..=k).map(|i| format!("beta_{i}")));
        for i in 1..=k {
            for j in i + 1..=k {
                names.push(format!("gamma_{i}_{j}"));
            }
        }
        names
    }

    pub fn hidden_population(&self) -> f64 {
        self.alpha.exp()
    }
}

/// E(N0) = exp(alpha).
pub fn hidden_population(theta: &ModelParams) -> f64 {
    theta.hidden_population()
}

/// Log-rate of one cell: alpha + sum of member main effects + sum of member-pair interactions.
pub fn log_rate(pattern: &CapturePattern, theta: &ModelParams) -> Result<f64> {
    let k = pattern.k();
    if theta.k() != k {
        return Err(mismatch(format!("pattern has K={k} but parameters have K={}", theta.k())));
    }
    let lists: Vec<usize> = pattern.lists().collect();
    let mut eta = theta.alpha;
    for (a, &i) in lists.iter().enumerate() {
        eta += theta.beta[i];
        for &j in &lists[a + 1..] {
            eta += theta.gamma[super::pair_index(k, i, j)];
        }
    }
    Ok(eta)
}

/// Independent priors: alpha ~ U[alpha_lo, alpha_hi], every beta and gamma ~ N(0, effect_sd^2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub effect_sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { alpha_lo: 1.0, alpha_hi: 10.0, effect_sd: 4.0 }
    }
}

impl PriorSpec {
    pub fn new(alpha_lo: f64, alpha_hi: f64, effect_sd: f64) -> Result<Self> {
        let spec = Self { alpha_lo, alpha_hi, effect_sd };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_lo.is_finite() && self.alpha_hi.is_finite() && self.alpha_lo < self.alpha_hi) {
            return Err(invalid(format!("alpha prior bounds [{}, {}] are not an interval", self.alpha_lo, self.alpha_hi)));
        }
        if !(self.effect_sd.is_finite() && self.effect_sd > 0.0) {
            return Err(invalid(format!("effect_sd must be positive, got {}", self.effect_sd)));
        }
        Ok(())
    }

    pub fn alpha_in_support(&self, alpha: f64) -> bool {
        (self.alpha_lo..=self.alpha_hi).contains(&alpha)
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<ModelParams> {
        check_k(k)?;
        self.validate()?;
        let alpha = Uniform::new_inclusive(self.alpha_lo, self.alpha_hi)
            .map_err(|e| invalid(e.to_string()))?
            .sample(rng);
        let normal = Normal::new(0.0, self.effect_sd).map_err(|e| invalid(e.to_string()))?;
        let beta = (0..k).map(|_| normal.sample(rng)).collect();
        let gamma = (0..n_pairs(k)).map(|_| normal.sample(rng)).collect();
        Ok(ModelParams { alpha, beta, gamma })
    }

    /// Prior mean and standard deviation of every coordinate of the flat parameter vector.
    pub fn moments(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let p = n_params(k);
        let mut loc = vec![0.0; p];
        let mut scale = vec![self.effect_sd; p];
        loc[0] = 0.5 * (self.alpha_lo + self.alpha_hi);
        scale[0] = (self.alpha_hi - self.alpha_lo) / 12f64.sqrt();
        (loc, scale)
    }

    /// Log prior density of a flat parameter vector; `-inf` outside the alpha support.
    pub fn log_density(&self, flat: &[f64]) -> f64 {
        if !self.alpha_in_support(flat[0]) {
            return f64::NEG_INFINITY;
        }
        let log_norm = -(self.effect_sd * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let var2 = 2.0 * self.effect_sd * self.effect_sd;
        -(self.alpha_hi - self.alpha_lo).ln() + flat[1..].iter().map(|x| log_norm - x * x / var2).sum::<f64>()
    }
}

pub fn log_prior(theta: &ModelParams, spec: &PriorSpec) -> f64 {
    spec.log_density(&theta.to_vec())
}
