use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::optim::{newton_ascent, numerical_hessian};
use crate::error::{invalid, mismatch, Error, Result};
use crate::model::{CensoredPoissonLikelihood, Dataset, ModelParams};
use crate::nn::{AdamConfig, AdamState};
use crate::rng_from_seed;

/// Two-sided normal quantile for 95% Wald intervals.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    /// Starts in total: the initial point plus `n_starts - 1` jittered copies.
    pub n_starts: usize,
    pub jitter_sd: f64,
    pub adam_iterations: usize,
    pub adam_learning_rate: f64,
    pub newton_iterations: usize,
    /// The information matrix counts as singular when its smallest eigenvalue
    /// is at most this fraction of its largest.
    pub singular_tolerance: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            n_starts: 5,
            jitter_sd: 0.5,
            adam_iterations: 2000,
            adam_learning_rate: 0.05,
            newton_iterations: 200,
            singular_tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(invalid("need at least one start"));
        }
        if !(self.jitter_sd.is_finite() && self.jitter_sd >= 0.0) {
            return Err(invalid(format!("jitter sd must be non-negative, got {}", self.jitter_sd)));
        }
        if !(self.adam_learning_rate.is_finite() && self.adam_learning_rate > 0.0) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.adam_learning_rate)));
        }
        if !(self.singular_tolerance > 0.0 && self.singular_tolerance < 1.0) {
            return Err(invalid(format!("singular tolerance must lie in (0, 1), got {}", self.singular_tolerance)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub name: String,
    pub estimate: f64,
    /// Infinite along directions where the information matrix is singular.
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MleResult {
    pub theta_hat: ModelParams,
    pub log_lik: f64,
    pub intervals: Vec<WaldInterval>,
    /// Set when the observed information is singular or not positive definite.
    pub unreliable: bool,
    pub min_information_eigenvalue: f64,
    pub gradient_max_abs: f64,
    pub finite_starts: usize,
}

impl MleResult {
    /// Wald interval for N0 = exp(alpha), by transforming the alpha interval.
    pub fn n0_interval(&self) -> (f64, f64, f64) {
        let a = &self.intervals[0];
        (a.estimate.exp(), a.lo.exp(), a.hi.exp())
    }
}

/// Tracks the best point seen so the search never returns worse than a point it queried.
struct Best {
    theta: Vec<f64>,
    ll: f64,
}

impl Best {
    fn offer(&mut self, theta: &[f64], ll: f64) {
        if ll.is_finite() && ll > self.ll {
            self.ll = ll;
            self.theta.copy_from_slice(theta);
        }
    }
}

fn gradient(lik: &CensoredPoissonLikelihood, theta: &[f64]) -> (f64, Vec<f64>) {
    lik.log_likelihood_and_gradient(theta).expect("dimension checked by caller")
}

fn adam_phase(lik: &CensoredPoissonLikelihood, theta: &mut [f64], config: &MleConfig, best: &mut Best) {
    let adam = AdamConfig { learning_rate: config.adam_learning_rate, ..AdamConfig::default() };
    let mut state = AdamState::new(theta.len(), adam);
    for _ in 0..config.adam_iterations {
        let (ll, g) = gradient(lik, theta);
        if !ll.is_finite() || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        best.offer(theta, ll);
        if g.iter().all(|v| v.abs() < 1e-10) {
            break;
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        state.step(theta, &neg);
    }
}

fn newton_phase(lik: &CensoredPoissonLikelihood, theta: &mut Vec<f64>, config: &MleConfig, best: &mut Best) {
    newton_ascent(&|x: &[f64]| gradient(lik, x), theta, config.newton_iterations, |x, v| best.offer(x, v));
}

fn default_init(data: &Dataset) -> Vec<f64> {
    let mut v = ModelParams::zeros(data.k()).to_vec();
    v[0] = (data.total_observed().max(1) as f64).ln();
    v
}

/// Censored-likelihood MLE with the default configuration.
pub fn fit_mle(data: &Dataset, init: Option<&ModelParams>) -> Result<MleResult> {
    fit_mle_with(data, init, &MleConfig::default())
}

/// Multi-start maximization: ADAM on the negative log-likelihood, then
/// damped Newton polishing with a numerical Hessian of the analytic score.
/// Wald intervals come from the observed information at the optimum.
pub fn fit_mle_with(data: &Dataset, init: Option<&ModelParams>, config: &MleConfig) -> Result<MleResult> {
    config.validate()?;
    let lik = CensoredPoissonLikelihood::new(data)?;
    let p = lik.n_params();
    let x0 = match init {
        Some(t) if t.k() != data.k() => {
            return Err(mismatch(format!("dataset has K={} but init has K={}", data.k(), t.k())))
        }
        Some(t) => t.to_vec(),
        None => default_init(data),
    };
    let mut rng = rng_from_seed(config.seed);
    let mut best = Best { theta: x0.clone(), ll: f64::NEG_INFINITY };
    let mut finite_starts = 0;
    for s in 0..config.n_starts {
        let mut theta: Vec<f64> = if s == 0 {
            x0.clone()
        } else {
            x0.iter().map(|v| v + config.jitter_sd * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let ll0 = lik.eval(&theta);
        if !ll0.is_finite() {
            continue;
        }
        finite_starts += 1;
        best.offer(&theta, ll0);
        adam_phase(&lik, &mut theta, config, &mut best);
        let mut polish = best_of_start(&lik, &theta);
        newton_phase(&lik, &mut polish, config, &mut best);
    }
    if finite_starts == 0 || !best.ll.is_finite() {
        return Err(Error::OptimizationFailure("log-likelihood is not finite at any start".into()));
    }
    // a final polish from the overall best point
    let mut theta = best.theta.clone();
    newton_phase(&lik, &mut theta, config, &mut best);

    let theta_hat = best.theta.clone();
    let (log_lik, g) = gradient(&lik, &theta_hat);
    let info = -numerical_hessian(&|x: &[f64]| gradient(&lik, x), &theta_hat);
    let eig = SymmetricEigen::new(info);
    let max_eig = eig.eigenvalues.amax();
    let min_eig = eig.eigenvalues.min();
    let threshold = config.singular_tolerance * max_eig;
    let unreliable = !(min_eig.is_finite() && max_eig > 0.0 && min_eig > threshold);
    let names = ModelParams::names(data.k());
    let intervals = (0..p)
        .map(|j| {
            let mut var = 0.0;
            for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors[(j, i)];
                if lambda > threshold && lambda > 0.0 {
                    var += v * v / lambda;
                } else if v * v > 1e-12 {
                    var = f64::INFINITY;
                }
            }
            let se = var.sqrt();
            let estimate = theta_hat[j];
            WaldInterval { name: names[j].clone(), estimate, se, lo: estimate - Z95 * se, hi: estimate + Z95 * se }
        })
        .collect();
    Ok(MleResult {
        theta_hat: ModelParams::from_slice(data.k(), &theta_hat)?,
        log_lik,
        intervals,
        unreliable,
        min_information_eigenvalue: min_eig,
        gradient_max_abs: g.iter().fold(0.0, |m, v| m.max(v.abs())),
        finite_starts,
    })
}

/// Profile log-likelihood of alpha: for each value the remaining parameters
/// are maximized with alpha held fixed. Grid points are solved outward from
/// the MLE, each warm-started from its neighbour nearer the optimum.
pub fn profile_alpha(data: &Dataset, fit: &MleResult, alphas: &[f64]) -> Result<Vec<f64>> {
    if fit.theta_hat.k() != data.k() {
        return Err(mismatch(format!("dataset has K={} but fit has K={}", data.k(), fit.theta_hat.k())));
    }
    if let Some(a) = alphas.iter().find(|a| !a.is_finite()) {
        return Err(invalid(format!("alpha grid value {a} is not finite")));
    }
    let lik = CensoredPoissonLikelihood::new(data)?;
    let hat = fit.theta_hat.to_vec();
    let mut order: Vec<usize> = (0..alphas.len()).collect();
    order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));
    let split = order.partition_point(|&i| alphas[i] < hat[0]);
    let (below, above) = order.split_at(split);
    let mut out = vec![f64::NEG_INFINITY; alphas.len()];
    for side in [below.iter().rev().copied().collect::<Vec<_>>(), above.to_vec()] {
        let mut rest = hat[1..].to_vec();
        for i in side {
            let alpha = alphas[i];
            let conditional = |x: &[f64]| {
                let mut full = Vec::with_capacity(x.len() + 1);
                full.push(alpha);
                full.extend_from_slice(x);
                let (ll, g) = gradient(&lik, &full);
                (ll, g[1..].to_vec())
            };
            let mut best = Best { theta: rest.clone(), ll: conditional(&rest).0 };
            newton_ascent(&conditional, &mut rest, 100, |x, v| best.offer(x, v));
            rest = best.theta;
            out[i] = best.ll;
        }
    }
    Ok(out)
}

fn best_of_start(lik: &CensoredPoissonLikelihood, theta: &[f64]) -> Vec<f64> {
    if lik.eval(theta).is_finite() {
        theta.to_vec()
    } else {
        vec![0.0; theta.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apply_censoring, log_likelihood, CensorInterval};

    #[test]
    fn saturated_fit_interpolates() {
        let counts = [37u64, 12, 5, 80, 9, 21, 3];
        let data = Dataset::observed(3, &counts).unwrap();
        let fit = fit_mle(&data, None).unwrap();
        let rates = CensoredPoissonLikelihood::new(&data).unwrap().design().log_rates(&fit.theta_hat.to_vec());
        for (eta, n) in rates.iter().zip(counts) {
            let rel = (eta.exp() - n as f64).abs() / n as f64;
            assert!(rel < 1e-6, "{} vs {n}", eta.exp());
        }
        assert!(!fit.unreliable);
        assert!(fit.intervals.iter().all(|c| c.lo < c.estimate && c.estimate < c.hi && c.se.is_finite()));
    }

    #[test]
    fn profile_peaks_at_the_mle() {
        let data = apply_censoring(&[4, 30, 2, 17, 6, 9, 55], Some(CensorInterval::new(1, 5).unwrap())).unwrap();
        let fit = fit_mle(&data, None).unwrap();
        let a = fit.theta_hat.alpha;
        let grid: Vec<f64> = (-4..=4).map(|i| a + 0.25 * i as f64).collect();
        let prof = profile_alpha(&data, &fit, &grid).unwrap();
        assert!((prof[4] - fit.log_lik).abs() < 1e-6, "{} vs {}", prof[4], fit.log_lik);
        for (i, v) in prof.iter().enumerate() {
            assert!(*v <= fit.log_lik + 1e-9, "grid point {i}");
        }
        assert!(prof[0] < prof[2] && prof[8] < prof[6]);
    }

    #[test]
    fn objective_is_model_log_likelihood() {
        let data = apply_censoring(&[4, 30, 2, 17, 0, 9, 55], Some(CensorInterval::new(1, 5).unwrap())).unwrap();
        let fit = fit_mle(&data, None).unwrap();
        let direct = log_likelihood(&data, &fit.theta_hat).unwrap();
        assert!((direct - fit.log_lik).abs() < 1e-12);
    }

    #[test]
    fn zero_overlap_drives_gamma_down() {
        // lists 1 and 2 never overlap: cells 110 and 111 are zero
        let data = Dataset::observed(3, &[40, 35, 6, 50, 8, 0, 0]).unwrap();
        let fit = fit_mle(&data, None).unwrap();
        assert!(fit.theta_hat.gamma[0] < -10.0, "{}", fit.theta_hat.gamma[0]);
        assert!(fit.unreliable);
        assert!(fit.intervals[4].se.is_infinite());
    }

    #[test]
    fn never_worse_than_init() {
        let data = Dataset::observed(3, &[3, 0, 1, 7, 0, 2, 1]).unwrap();
        let truth = ModelParams::new(3, 1.5, vec![-0.5, 0.2, 0.1], vec![0.3, -0.2, 0.0]).unwrap();
        let fit = fit_mle(&data, Some(&truth)).unwrap();
        assert!(fit.log_lik >= log_likelihood(&data, &truth).unwrap());
    }

    #[test]
    fn mismatched_init() {
        let data = Dataset::observed(2, &[3, 4, 5]).unwrap();
        assert!(fit_mle(&data, Some(&ModelParams::zeros(3))).is_err());
    }
}
