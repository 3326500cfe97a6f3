use web_time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::posterior::{least_squares_start, LogDensity, MsePosterior};
use super::rhat::gelman_rubin_slices;
use crate::error::{invalid, Error, Result};
use crate::model::{Dataset, ModelParams, PriorSpec};
use crate::samples::PosteriorSamples;
use crate::{derive_seed, rng_from_seed, SeededRng};

/// Chains count as converged when every parameter's R̂ is at or below this.
pub const RHAT_THRESHOLD: f64 = 1.01;

/// Consecutive rejections after which a chain is reported as stuck.
pub const STUCK_AFTER: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// One Gaussian proposal for the whole vector, with its covariance learned
    /// from the burn-in draws and a global scale tuned toward the target rate.
    AdaptiveBlock,
    /// One coordinate at a time, each with its own step size tuned toward the target rate.
    Componentwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub target_acceptance: f64,
    /// Iterations between covariance refreshes during burn-in; accumulation
    /// of the empirical covariance starts after the first window.
    pub adaptation_window: usize,
    pub proposal: ProposalKind,
    /// Disabling adaptation keeps the initial kernel for the whole run.
    pub adapt: bool,
    /// Proposal standard deviation per coordinate when no covariance is supplied.
    pub initial_step: f64,
    /// Per-chain jitter around the starting point, in units of the initial proposal.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iterations: 5000,
            n_burnin: 1000,
            target_acceptance: 0.234,
            adaptation_window: 200,
            proposal: ProposalKind::AdaptiveBlock,
            adapt: true,
            initial_step: 0.1,
            init_jitter: 2.0,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(invalid(format!("R-hat needs at least 2 chains, got {}", self.n_chains)));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(invalid(format!(
                "burn-in ({}) must be shorter than the run ({})",
                self.n_burnin, self.n_iterations
            )));
        }
        if self.n_iterations - self.n_burnin < 4 {
            return Err(invalid("need at least 4 post-burn-in iterations"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(invalid(format!("target acceptance must lie in (0, 1), got {}", self.target_acceptance)));
        }
        if self.adaptation_window == 0 {
            return Err(invalid("adaptation window must be positive"));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(invalid(format!("initial step must be positive, got {}", self.initial_step)));
        }
        if !(self.init_jitter.is_finite() && self.init_jitter >= 0.0) {
            return Err(invalid(format!("init jitter must be non-negative, got {}", self.init_jitter)));
        }
        Ok(())
    }
}

/// Post-burn-in output of one chain.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    /// Row-major `n_draws x dim`.
    pub draws: Vec<f64>,
    pub log_density: Vec<f64>,
    /// Fraction of accepted proposals after burn-in.
    pub acceptance_rate: f64,
    pub longest_rejection_run: usize,
}

impl ChainOutput {
    pub fn stuck(&self) -> bool {
        self.longest_rejection_run >= STUCK_AFTER
    }
}

#[derive(Clone, Debug)]
pub struct McmcResult {
    pub names: Vec<String>,
    pub dim: usize,
    pub chains: Vec<ChainOutput>,
    /// Split-R̂ per parameter; infinite when a parameter never moved.
    pub rhat: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub seconds: f64,
    pub seconds_per_iteration: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcSummary {
    pub sampler: String,
    pub n_chains: usize,
    pub n_draws_per_chain: usize,
    pub rhat: Vec<(String, Option<f64>)>,
    pub max_rhat: Option<f64>,
    pub rhat_threshold: f64,
    pub converged: bool,
    pub acceptance_rates: Vec<f64>,
    pub warnings: Vec<String>,
    pub seconds: f64,
    pub seconds_per_iteration: f64,
}

impl McmcResult {
    pub fn n_draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.log_density.len())
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn chain_column(&self, chain: usize, param: usize) -> Vec<f64> {
        self.chains[chain].draws.chunks_exact(self.dim).map(|r| r[param]).collect()
    }

    /// All post-burn-in draws, chain by chain, row-major.
    pub fn pooled_draws(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.draws.iter().copied()).collect()
    }

    pub fn pooled_column(&self, param: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.draws.chunks_exact(self.dim).map(move |r| r[param])).collect()
    }

    pub fn posterior_samples(&self, k: usize) -> Result<PosteriorSamples> {
        PosteriorSamples::new(k, self.pooled_draws())
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.acceptance_rate).collect()
    }

    /// CSV for one chain: `iteration`, the parameters, then `log_posterior`.
    /// Iterations are numbered from the end of burn-in.
    pub fn chain_csv(&self, chain: usize, first_iteration: usize) -> String {
        let c = &self.chains[chain];
        let mut out = format!("iteration,{},log_posterior\n", self.names.join(","));
        for (i, (row, lp)) in c.draws.chunks_exact(self.dim).zip(&c.log_density).enumerate() {
            out.push_str(&(first_iteration + i).to_string());
            for x in row {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push(',');
            out.push_str(&lp.to_string());
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, sampler: &str) -> McmcSummary {
        let finite = |x: f64| x.is_finite().then_some(x);
        McmcSummary {
            sampler: sampler.to_string(),
            n_chains: self.chains.len(),
            n_draws_per_chain: self.n_draws_per_chain(),
            rhat: self.names.iter().cloned().zip(self.rhat.iter().map(|&r| finite(r))).collect(),
            max_rhat: finite(self.max_rhat()),
            rhat_threshold: RHAT_THRESHOLD,
            converged: self.converged,
            acceptance_rates: self.acceptance_rates(),
            warnings: self.warnings.clone(),
            seconds: self.seconds,
            seconds_per_iteration: self.seconds_per_iteration,
        }
    }
}

/// A random-walk Metropolis kernel with a fixed Gaussian proposal.
#[derive(Clone, Debug)]
pub struct RandomWalkKernel {
    /// Lower Cholesky factor of the proposal covariance, row-major `dim x dim`.
    chol: Vec<f64>,
    dim: usize,
}

impl RandomWalkKernel {
    pub fn isotropic(dim: usize, step: f64) -> Self {
        let mut chol = vec![0.0; dim * dim];
        for i in 0..dim {
            chol[i * dim + i] = step;
        }
        Self { chol, dim }
    }

    /// Kernel with proposal covariance `cov`; `None` when `cov` is not positive definite.
    pub fn from_covariance(cov: &[f64], dim: usize) -> Option<Self> {
        let m = DMatrix::from_row_slice(dim, dim, cov);
        let l = m.cholesky()?.l();
        let mut chol = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                chol[i * dim + j] = l[(i, j)];
            }
        }
        Some(Self { chol, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One Metropolis step with the proposal covariance multiplied by `scale^2`.
    /// Updates `x` and `lp` in place and reports acceptance.
    pub fn step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
        &self,
        target: &D,
        x: &mut [f64],
        lp: &mut f64,
        scale: f64,
        rng: &mut R,
    ) -> bool {
        let d = self.dim;
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let proposal: Vec<f64> = (0..d)
            .map(|i| x[i] + scale * (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>())
            .collect();
        let lp_new = target.log_density(&proposal);
        if accept(*lp, lp_new, rng) {
            x.copy_from_slice(&proposal);
            *lp = lp_new;
            true
        } else {
            false
        }
    }
}

fn accept<R: Rng + ?Sized>(lp_old: f64, lp_new: f64, rng: &mut R) -> bool {
    if lp_new.is_nan() || lp_new == f64::NEG_INFINITY {
        return false;
    }
    let log_ratio = lp_new - lp_old;
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Running mean and covariance (Welford).
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d * d] }
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.n += 1.0;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / self.n;
        }
        for ((row, xi), mi) in self.m2.chunks_exact_mut(d).zip(x).zip(&self.mean) {
            let after = xi - mi;
            for (m2, dl) in row.iter_mut().zip(&delta) {
                *m2 += after * dl;
            }
        }
    }

    fn covariance(&self) -> Option<Vec<f64>> {
        (self.n >= 2.0).then(|| self.m2.iter().map(|v| v / (self.n - 1.0)).collect())
    }
}

fn robbins_monro_rate(t: usize) -> f64 {
    1.0 / ((t + 1) as f64).powf(0.6)
}

fn run_chain<D: LogDensity + ?Sized>(
    target: &D,
    start: &[f64],
    initial: &RandomWalkKernel,
    tuned: bool,
    config: &McmcConfig,
    rng: &mut SeededRng,
) -> ChainOutput {
    let d = target.dim();
    let mut x = start.to_vec();
    let mut lp = target.log_density(&x);
    let n_keep = config.n_iterations - config.n_burnin;
    let mut draws = Vec::with_capacity(n_keep * d);
    let mut log_density = Vec::with_capacity(n_keep);
    let mut accepted_after = 0usize;
    let mut run = 0usize;
    let mut longest = 0usize;

    let optimal = 2.38 / (d as f64).sqrt();
    let mut kernel = initial.clone();
    let mut log_scale = if tuned { optimal.ln() } else { 0.0 };
    let mut moments = Moments::new(d);
    let mut learned = tuned;
    let mut log_steps: Vec<f64> = (0..d).map(|i| initial.chol[i * d + i].ln()).collect();
    let w = config.adaptation_window;

    for t in 0..config.n_iterations {
        let burnin = t < config.n_burnin;
        let adapting = burnin && config.adapt;
        let (moved, accepted) = match config.proposal {
            ProposalKind::AdaptiveBlock => {
                let ok = kernel.step(target, &mut x, &mut lp, log_scale.exp(), rng);
                if adapting {
                    let rate = robbins_monro_rate(t);
                    log_scale += rate * (f64::from(u8::from(ok)) - config.target_acceptance);
                    if t >= w {
                        moments.push(&x);
                    }
                    if t >= 2 * w && (t + 1) % w == 0 {
                        if let Some(cov) = moments.covariance() {
                            let ridge = 1e-10 * (0..d).map(|i| cov[i * d + i]).sum::<f64>() / d as f64;
                            let mut cov = cov;
                            for i in 0..d {
                                cov[i * d + i] += ridge.max(1e-300);
                            }
                            if let Some(k) = RandomWalkKernel::from_covariance(&cov, d) {
                                kernel = k;
                                if !learned {
                                    log_scale = optimal.ln();
                                    learned = true;
                                }
                            }
                        }
                    }
                }
                (ok, usize::from(ok))
            }
            ProposalKind::Componentwise => {
                let mut any = false;
                let mut accepted = 0usize;
                for i in 0..d {
                    let old = x[i];
                    x[i] = old + log_steps[i].exp() * rng.sample::<f64, _>(StandardNormal);
                    let lp_new = target.log_density(&x);
                    let ok = accept(lp, lp_new, rng);
                    if ok {
                        lp = lp_new;
                        any = true;
                        accepted += 1;
                    } else {
                        x[i] = old;
                    }
                    if adapting {
                        log_steps[i] += robbins_monro_rate(t) * (f64::from(u8::from(ok)) - config.target_acceptance);
                    }
                }
                (any, accepted)
            }
        };
        if moved {
            run = 0;
        } else {
            run += 1;
            longest = longest.max(run);
        }
        if !burnin {
            accepted_after += accepted;
            draws.extend_from_slice(&x);
            log_density.push(lp);
        }
    }
    let proposals_after = match config.proposal {
        ProposalKind::AdaptiveBlock => n_keep,
        ProposalKind::Componentwise => n_keep * d,
    };
    ChainOutput {
        draws,
        log_density,
        acceptance_rate: accepted_after as f64 / proposals_after as f64,
        longest_rejection_run: longest,
    }
}

fn jittered_start<D: LogDensity + ?Sized>(
    target: &D,
    start: &[f64],
    kernel: &RandomWalkKernel,
    jitter: f64,
    rng: &mut SeededRng,
) -> Vec<f64> {
    let d = start.len();
    for _ in 0..100 {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<f64> = (0..d)
            .map(|i| start[i] + jitter * (0..=i).map(|j| kernel.chol[i * d + j] * z[j]).sum::<f64>())
            .collect();
        if target.log_density(&x).is_finite() {
            return x;
        }
    }
    start.to_vec()
}

/// Runs `config.n_chains` chains from jittered copies of `start` against any target.
pub fn run_chains<D: LogDensity + ?Sized>(target: &D, start: &[f64], names: Vec<String>, config: &McmcConfig) -> Result<McmcResult> {
    run_chains_with(target, start, None, names, config)
}

/// Like [`run_chains`], seeding the proposal with a covariance guess
/// (row-major `dim x dim`), typically the inverse Hessian at the mode.
/// A guess that is not positive definite is ignored.
pub fn run_chains_with<D: LogDensity + ?Sized>(
    target: &D,
    start: &[f64],
    covariance: Option<&[f64]>,
    names: Vec<String>,
    config: &McmcConfig,
) -> Result<McmcResult> {
    config.validate()?;
    let d = target.dim();
    if start.len() != d || names.len() != d {
        return Err(crate::error::mismatch(format!(
            "target has dimension {d}, start has {} and names have {}",
            start.len(),
            names.len()
        )));
    }
    if !target.log_density(start).is_finite() {
        return Err(Error::Numeric("log-density is not finite at the starting point".into()));
    }
    let guess = covariance.filter(|c| c.len() == d * d).and_then(|c| RandomWalkKernel::from_covariance(c, d));
    let tuned = guess.is_some();
    let initial = guess.unwrap_or_else(|| RandomWalkKernel::isotropic(d, config.initial_step));
    let began = Instant::now();
    let one = |c: usize| {
        let mut rng = rng_from_seed(derive_seed(config.seed, c as u64));
        let x0 = jittered_start(target, start, &initial, config.init_jitter, &mut rng);
        run_chain(target, &x0, &initial, tuned, config, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let chains: Vec<ChainOutput> = {
        use rayon::prelude::*;
        (0..config.n_chains).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chains: Vec<ChainOutput> = (0..config.n_chains).map(one).collect();
    let seconds = began.elapsed().as_secs_f64();

    let mut warnings = Vec::new();
    for (i, c) in chains.iter().enumerate() {
        if c.stuck() {
            warnings.push(format!(
                "chain {i} rejected {} consecutive proposals",
                c.longest_rejection_run
            ));
        }
    }
    let mut rhat = Vec::with_capacity(d);
    for p in 0..d {
        let columns: Vec<Vec<f64>> =
            chains.iter().map(|c| c.draws.chunks_exact(d).map(|r| r[p]).collect()).collect();
        let slices: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
        match gelman_rubin_slices(&slices) {
            Ok(r) => rhat.push(r),
            Err(e) => {
                warnings.push(format!("R-hat for {}: {e}", names[p]));
                rhat.push(f64::INFINITY);
            }
        }
    }
    let converged = rhat.iter().all(|&r| r <= RHAT_THRESHOLD);
    let total_iterations = (config.n_chains * config.n_iterations) as f64;
    Ok(McmcResult {
        names,
        dim: d,
        chains,
        rhat,
        converged,
        warnings,
        seconds,
        seconds_per_iteration: seconds / total_iterations,
    })
}

/// Samples the MSE posterior for `data`. Chains start around the posterior
/// mode (found by Newton ascent from a least-squares fit of the log-counts)
/// with the proposal covariance seeded from the curvature there.
pub fn run_mcmc(data: &Dataset, prior: &PriorSpec, config: &McmcConfig) -> Result<McmcResult> {
    let target = MsePosterior::new(data, *prior)?;
    let mut start = least_squares_start(data)?;
    let margin = 1e-3 * (prior.alpha_hi - prior.alpha_lo);
    start[0] = start[0].clamp(prior.alpha_lo + margin, prior.alpha_hi - margin);
    if !target.log_density(&start).is_finite() {
        start = vec![0.0; start.len()];
        start[0] = 0.5 * (prior.alpha_lo + prior.alpha_hi);
    }
    let (mode, cov) = target.laplace(&start);
    run_chains_with(&target, &mode, cov.as_deref(), ModelParams::names(data.k()), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gaussian2 {
        mean: [f64; 2],
        prec: [[f64; 2]; 2],
    }

    impl LogDensity for Gaussian2 {
        fn dim(&self) -> usize {
            2
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            let a = x[0] - self.mean[0];
            let b = x[1] - self.mean[1];
            -0.5 * (self.prec[0][0] * a * a + 2.0 * self.prec[0][1] * a * b + self.prec[1][1] * b * b)
        }
    }

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn config_validation() {
        let mut c = McmcConfig::default();
        assert!(c.validate().is_ok());
        c.n_chains = 1;
        assert!(c.validate().is_err());
        let c = McmcConfig { n_burnin: 5000, ..McmcConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn identical_seed_identical_chains() {
        let g = Gaussian2 { mean: [1.0, -2.0], prec: [[1.0, 0.0], [0.0, 1.0]] };
        let cfg = McmcConfig { n_iterations: 500, n_burnin: 200, seed: 9, ..McmcConfig::default() };
        let a = run_chains(&g, &[0.0, 0.0], names(2), &cfg).unwrap();
        let b = run_chains(&g, &[0.0, 0.0], names(2), &cfg).unwrap();
        for (x, y) in a.chains.iter().zip(&b.chains) {
            assert_eq!(x.draws, y.draws);
        }
        let c = run_chains(&g, &[0.0, 0.0], names(2), &McmcConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.chains[0].draws, c.chains[0].draws);
    }

    #[test]
    fn stuck_chain_is_a_warning() {
        struct Spike;
        impl LogDensity for Spike {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, x: &[f64]) -> f64 {
                if x[0] == 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
        let cfg = McmcConfig { n_iterations: 2000, n_burnin: 100, init_jitter: 0.0, ..McmcConfig::default() };
        let r = run_chains(&Spike, &[0.0], names(1), &cfg).unwrap();
        assert!(r.chains.iter().all(ChainOutput::stuck));
        assert!(!r.converged);
        assert!(r.warnings.iter().any(|w| w.contains("consecutive")));
    }

    #[test]
    fn componentwise_targets_gaussian() {
        let g = Gaussian2 { mean: [3.0, -1.0], prec: [[2.0, 0.0], [0.0, 0.5]] };
        let cfg = McmcConfig { proposal: ProposalKind::Componentwise, seed: 4, ..McmcConfig::default() };
        let r = run_chains(&g, &[0.0, 0.0], names(2), &cfg).unwrap();
        let m0 = r.pooled_column(0).iter().sum::<f64>() / 16000.0;
        let m1 = r.pooled_column(1).iter().sum::<f64>() / 16000.0;
        assert!((m0 - 3.0).abs() < 0.05, "{m0}");
        assert!((m1 + 1.0).abs() < 0.1, "{m1}");
        assert!(r.acceptance_rates().iter().all(|a| (0.15..0.35).contains(a)), "{:?}", r.acceptance_rates());
    }

    #[test]
    fn chain_csv_layout() {
        let g = Gaussian2 { mean: [0.0, 0.0], prec: [[1.0, 0.0], [0.0, 1.0]] };
        let cfg = McmcConfig { n_iterations: 20, n_burnin: 10, ..McmcConfig::default() };
        let r = run_chains(&g, &[0.0, 0.0], names(2), &cfg).unwrap();
        let csv = r.chain_csv(0, 10);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iteration,x0,x1,log_posterior");
        assert_eq!(lines.len(), 11);
        assert!(lines[1].starts_with("10,"));
        let s = serde_json::to_string(&r.summary("rwm")).unwrap();
        assert!(s.contains("\"converged\""));
    }
}
