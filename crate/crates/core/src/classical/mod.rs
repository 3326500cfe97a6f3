//! Likelihood-based baselines: censored-likelihood MLE with Wald intervals
//! and adaptive random-walk Metropolis with split-R̂ gating.

mod mcmc;
mod mle;
mod optim;
mod posterior;
mod rhat;

pub use mcmc::{
    run_chains, run_chains_with, run_mcmc, ChainOutput, McmcConfig, McmcResult, McmcSummary, ProposalKind, RandomWalkKernel,
    RHAT_THRESHOLD, STUCK_AFTER,
};
pub use mle::{fit_mle, fit_mle_with, profile_alpha, MleConfig, MleResult, WaldInterval};
pub use posterior::{least_squares_start, log_posterior, LogDensity, MsePosterior};
pub use rhat::{gelman_rubin, gelman_rubin_slices};
