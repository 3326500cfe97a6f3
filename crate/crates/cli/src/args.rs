use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mse_core::classical::McmcConfig;
use mse_core::model::{CensorInterval, PriorSpec};
use mse_core::nn::AdamConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mse", version, about = "Multiple systems estimation with interval-censored counts")]
pub struct Cli {
    /// Master seed for every random stream of the run.
    #[arg(long, global = true, env = "MSE_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one dataset from fixed parameters or from the prior.
    Simulate(SimulateArgs),
    /// Train an NBE or NPE checkpoint on simulated data.
    Train(TrainArgs),
    /// Apply a trained checkpoint to a dataset.
    Infer(InferArgs),
    /// Sample the posterior with adaptive Metropolis.
    Mcmc(McmcArgs),
    /// Maximum-likelihood fit with Wald intervals.
    Mle(MleArgs),
    /// Compare methods on a simulated test set.
    Evaluate(EvaluateArgs),
    /// Posterior predictive check of a dataset under an NPE checkpoint.
    Ppc(PpcArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Mcmc(_) => "mcmc",
            Command::Mle(_) => "mle",
            Command::Evaluate(_) => "evaluate",
            Command::Ppc(_) => "ppc",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PriorArgs {
    /// Lower bound of the uniform prior on alpha.
    #[arg(long, default_value_t = PriorSpec::default().alpha_lo, allow_negative_numbers = true)]
    pub alpha_lo: f64,
    /// Upper bound of the uniform prior on alpha.
    #[arg(long, default_value_t = PriorSpec::default().alpha_hi, allow_negative_numbers = true)]
    pub alpha_hi: f64,
    /// Standard deviation of the normal prior on every main effect and interaction.
    #[arg(long, default_value_t = PriorSpec::default().effect_sd)]
    pub effect_sd: f64,
}

impl PriorArgs {
    pub fn spec(&self) -> CliResult<PriorSpec> {
        PriorSpec::new(self.alpha_lo, self.alpha_hi, self.effect_sd).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct CensorArgs {
    /// Censor every count in [A, B]; omit for fully observed data.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub censor: Option<Vec<u64>>,
}

impl CensorArgs {
    pub fn interval(&self) -> CliResult<Option<CensorInterval>> {
        match self.censor.as_deref() {
            None => Ok(None),
            Some(&[a, b]) => CensorInterval::new(a, b).map(Some).map_err(|e| CliError::Usage(format!("--censor {a} {b}: {e}"))),
            Some(other) => Err(CliError::Usage(format!("--censor takes two values, got {}", other.len()))),
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Number of lists.
    #[arg(long)]
    pub k: usize,
    #[arg(long, allow_negative_numbers = true, conflicts_with = "from_prior")]
    pub alpha: Option<f64>,
    /// One main effect per list.
    #[arg(long, num_args = 1.., allow_negative_numbers = true, conflicts_with = "from_prior")]
    pub beta: Option<Vec<f64>>,
    /// One interaction per pair of lists, ordered (1,2), (1,3), ..., (K-1,K).
    #[arg(long, num_args = 1.., allow_negative_numbers = true, conflicts_with = "from_prior")]
    pub gamma: Option<Vec<f64>>,
    /// Draw the parameters from the prior instead.
    #[arg(long)]
    pub from_prior: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub censor: CensorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nbe,
    Npe,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[command(flatten)]
    pub censor: CensorArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Fresh simulations per epoch.
    #[arg(long, default_value_t = 10_000)]
    pub sims_per_epoch: usize,
    #[arg(long, default_value_t = 2_000)]
    pub validation_sims: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = AdamConfig::default().learning_rate)]
    pub learning_rate: f64,
    /// Hidden widths, comma separated (the NPE summary encoder for --method npe).
    #[arg(long, default_value = "256,256,256")]
    pub arch: String,
    /// Width of the NPE summary vector.
    #[arg(long, default_value_t = 128)]
    pub summary_dim: usize,
    /// Number of NPE coupling blocks.
    #[arg(long, default_value_t = 5)]
    pub flow_blocks: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn widths(&self) -> CliResult<Vec<usize>> {
        parse_widths(&self.arch)
    }
}

pub fn parse_widths(s: &str) -> CliResult<Vec<usize>> {
    let widths: Vec<usize> = s
        .split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--arch {s:?}: {e}")))?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(CliError::Usage(format!("--arch {s:?}: widths must be positive")));
    }
    Ok(widths)
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct InferArgs {
    /// Checkpoint directory written by `mse train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset JSON.
    #[arg(long)]
    pub data: PathBuf,
    /// Posterior draws (NPE only).
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
}

impl ChainArgs {
    pub fn config(&self, seed: u64) -> CliResult<McmcConfig> {
        let cfg = McmcConfig { n_chains: self.chains, n_iterations: self.iters, n_burnin: self.burnin, seed, ..McmcConfig::default() };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct McmcArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub chains: ChainArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Exit with status 2 when any R-hat exceeds the convergence threshold.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct MleArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Optimizer restarts from jittered initial values.
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// NBE and/or NPE checkpoint directories.
    #[arg(long, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Number of simulated test datasets.
    #[arg(long, default_value_t = 500)]
    pub test_sets: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[command(flatten)]
    pub censor: CensorArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// NPE posterior draws per dataset.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long)]
    pub with_mcmc: bool,
    #[arg(long)]
    pub with_mle: bool,
    #[command(flatten)]
    pub chains: ChainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PpcArgs {
    /// NPE checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Posterior draws, one replicate dataset each.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// A run directory or its manifest.json.
    pub manifest: PathBuf,
    /// Where to write the reproduced outputs.
    #[arg(long)]
    pub out: PathBuf,
}
