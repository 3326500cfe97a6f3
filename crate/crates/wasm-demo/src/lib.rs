//! Browser bindings: simulate a censored K-list dataset, profile its
//! likelihood over alpha, and sample the posterior with adaptive Metropolis.
//!
//! Every export takes and returns JSON strings so the page needs no glue
//! beyond `JSON.parse`. The pure `*_json` functions carry the logic and are
//! tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use mse_core::classical::{fit_mle, profile_alpha, run_mcmc, McmcConfig};
use mse_core::model::{apply_censoring, simulate_counts, CensorInterval, Dataset, ModelParams, PriorSpec};
use mse_core::{derive_seed, rng_from_seed};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Most draws kept per chain in the MCMC response, to keep the payload small.
const MAX_RETURNED_PER_CHAIN: usize = 500;

#[derive(Debug, Deserialize)]
pub struct SimulateRequest {
    pub k: usize,
    pub alpha: f64,
    /// Standard deviation of the randomly drawn main effects and interactions.
    pub effect_sd: f64,
    /// Censor counts in `[lo, hi]`; `None` leaves the table fully observed.
    pub censor: Option<(u64, u64)>,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct SimulateResponse {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub n0: f64,
    pub patterns: Vec<String>,
    pub raw_counts: Vec<u64>,
    /// The censored dataset in the same JSON form the CLI reads.
    pub dataset: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct ProfileResponse {
    pub alpha_hat: f64,
    pub n0_hat: f64,
    pub n0_lo: f64,
    pub n0_hi: f64,
    pub log_lik: f64,
    pub unreliable: bool,
    pub alphas: Vec<f64>,
    pub profile: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct McmcRequest {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub effect_sd: f64,
    pub chains: usize,
    pub iterations: usize,
    pub burnin: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct McmcResponse {
    pub converged: bool,
    pub max_rhat: Option<f64>,
    pub acceptance_rates: Vec<f64>,
    pub n0_median: f64,
    pub n0_lo: f64,
    pub n0_hi: f64,
    pub warnings: Vec<String>,
    /// Thinned N0 draws per chain.
    pub n0_draws: Vec<Vec<f64>>,
}

type DemoResult<T> = Result<T, String>;

fn to_json<T: Serialize>(value: &T) -> DemoResult<String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub fn simulate_json(request: &str) -> DemoResult<String> {
    let req: SimulateRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if !(req.effect_sd.is_finite() && req.effect_sd >= 0.0) {
        return Err(format!("effect_sd must be a finite non-negative number, got {}", req.effect_sd));
    }
    let mut rng = rng_from_seed(req.seed);
    let normal = Normal::new(0.0, req.effect_sd).map_err(|e| e.to_string())?;
    let dim = mse_core::model::n_params(req.k);
    let mut flat = vec![req.alpha];
    flat.extend((1..dim).map(|_| normal.sample(&mut rng)));
    let theta = ModelParams::from_slice(req.k, &flat).map_err(|e| e.to_string())?;
    let raw = simulate_counts(&theta, &mut rng).map_err(|e| e.to_string())?;
    let interval = req.censor.map(|(lo, hi)| CensorInterval::new(lo, hi)).transpose().map_err(|e| e.to_string())?;
    let signed: Vec<i64> = raw.iter().map(|&n| n as i64).collect();
    let data = apply_censoring(&signed, interval).map_err(|e| e.to_string())?;
    let patterns = mse_core::model::enumerate_patterns(req.k)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|p| p.to_string())
        .collect();
    to_json(&SimulateResponse {
        names: ModelParams::names(req.k),
        n0: theta.hidden_population(),
        theta: flat,
        patterns,
        raw_counts: raw,
        dataset: serde_json::to_value(data.to_file()).map_err(|e| e.to_string())?,
    })
}

/// Fits the MLE, then evaluates the profile over `points` evenly spaced
/// alphas spanning `half_width` either side of the estimate.
pub fn profile_json(dataset: &str, half_width: f64, points: usize) -> DemoResult<String> {
    let data = Dataset::from_json(dataset).map_err(|e| e.to_string())?;
    if !(half_width.is_finite() && half_width > 0.0) || points < 2 {
        return Err("profile needs a positive half width and at least two points".into());
    }
    let fit = fit_mle(&data, None).map_err(|e| e.to_string())?;
    let alpha_hat = fit.theta_hat.alpha;
    let step = 2.0 * half_width / (points - 1) as f64;
    let alphas: Vec<f64> = (0..points).map(|i| alpha_hat - half_width + step * i as f64).collect();
    let profile = profile_alpha(&data, &fit, &alphas).map_err(|e| e.to_string())?;
    let (n0_hat, n0_lo, n0_hi) = fit.n0_interval();
    to_json(&ProfileResponse {
        alpha_hat,
        n0_hat,
        n0_lo,
        n0_hi,
        log_lik: fit.log_lik,
        unreliable: fit.unreliable,
        alphas,
        profile,
    })
}

pub fn mcmc_json(dataset: &str, request: &str) -> DemoResult<String> {
    let data = Dataset::from_json(dataset).map_err(|e| e.to_string())?;
    let req: McmcRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let prior = PriorSpec::new(req.alpha_lo, req.alpha_hi, req.effect_sd).map_err(|e| e.to_string())?;
    let config = McmcConfig {
        n_chains: req.chains,
        n_iterations: req.iterations,
        n_burnin: req.burnin,
        seed: derive_seed(req.seed, 0),
        ..McmcConfig::default()
    };
    let result = run_mcmc(&data, &prior, &config).map_err(|e| e.to_string())?;
    let summary = result.summary("adaptive random-walk Metropolis");
    let n0 = result.posterior_samples(data.k()).map_err(|e| e.to_string())?.summary().n0;
    let kept = result.n_draws_per_chain();
    let thin = kept.div_ceil(MAX_RETURNED_PER_CHAIN).max(1);
    let n0_draws = (0..result.chains.len())
        .map(|c| result.chain_column(c, 0).iter().step_by(thin).map(|a| a.exp()).collect())
        .collect();
    to_json(&McmcResponse {
        converged: summary.converged,
        max_rhat: summary.max_rhat,
        acceptance_rates: summary.acceptance_rates,
        n0_median: n0.median,
        n0_lo: n0.lo95,
        n0_hi: n0.hi95,
        warnings: summary.warnings,
        n0_draws,
    })
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> Result<String, JsError> {
    simulate_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn profile(dataset: &str, half_width: f64, points: usize) -> Result<String, JsError> {
    profile_json(dataset, half_width, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mcmc(dataset: &str, request: &str) -> Result<String, JsError> {
    mcmc_json(dataset, request).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simulated(censor: &str) -> serde_json::Value {
        let req = format!(r#"{{"k":3,"alpha":6.0,"effect_sd":0.5,"censor":{censor},"seed":11}}"#);
        serde_json::from_str(&simulate_json(&req).unwrap()).unwrap()
    }

    #[test]
    fn simulate_is_deterministic_and_shaped() {
        let a = simulated("[1,5]");
        assert_eq!(a, simulated("[1,5]"));
        assert_eq!(a["raw_counts"].as_array().unwrap().len(), 7);
        assert_eq!(a["theta"].as_array().unwrap().len(), 7);
        assert_eq!(a["theta"][0].as_f64().unwrap(), 6.0);
        assert!((a["n0"].as_f64().unwrap() - 6f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn simulate_rejects_bad_interval() {
        let req = r#"{"k":3,"alpha":6.0,"effect_sd":0.5,"censor":[5,1],"seed":1}"#;
        assert!(simulate_json(req).is_err());
    }

    #[test]
    fn profile_peaks_at_estimate() {
        let data = simulated("null")["dataset"].to_string();
        let out: serde_json::Value = serde_json::from_str(&profile_json(&data, 1.0, 21).unwrap()).unwrap();
        let prof: Vec<f64> = serde_json::from_value(out["profile"].clone()).unwrap();
        let peak = out["log_lik"].as_f64().unwrap();
        assert!((prof[10] - peak).abs() < 1e-6);
        assert!(prof.iter().all(|v| *v <= peak + 1e-9));
    }

    #[test]
    fn mcmc_returns_thinned_draws() {
        let data = simulated("[1,3]")["dataset"].to_string();
        let req = r#"{"alpha_lo":1,"alpha_hi":10,"effect_sd":4,"chains":2,"iterations":1500,"burnin":500,"seed":3}"#;
        let out: serde_json::Value = serde_json::from_str(&mcmc_json(&data, req).unwrap()).unwrap();
        let draws = out["n0_draws"].as_array().unwrap();
        assert_eq!(draws.len(), 2);
        assert_eq!(draws[0].as_array().unwrap().len(), 500);
        let (lo, hi) = (out["n0_lo"].as_f64().unwrap(), out["n0_hi"].as_f64().unwrap());
        assert!(lo < out["n0_median"].as_f64().unwrap() && out["n0_median"].as_f64().unwrap() < hi);
    }
}
