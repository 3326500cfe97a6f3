use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use mse_core::classical::{fit_mle_with, run_mcmc, MleConfig, MleResult};
use mse_core::eval::{
    evaluate_mcmc, evaluate_mle, evaluate_nbe, evaluate_npe, make_test_set, results_csv, MethodEvaluation, StudyReport,
    DEFAULT_LEVELS, MCMC_SAMPLER,
};
use mse_core::model::{draw_pair, n_pairs, simulate_counts, Dataset, Design, ModelParams};
use mse_core::nbe::{train_nbe, NbeArchitecture, NbeModel, BUNDLE_FILE};
use mse_core::nn::AdamConfig;
use mse_core::npe::{posterior_predictive, train_npe, NpeArchitecture, NpeModel};
use mse_core::samples::PosteriorSummary;
use mse_core::train::TrainConfig;
use mse_core::{derive_seed, rng_from_seed};

use crate::args::{EvaluateArgs, InferArgs, McmcArgs, Method, MleArgs, PpcArgs, SimulateArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::RunDir;

/// Directory name of the checkpoint bundle inside a `train` run.
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// What every command needs besides its own flags.
pub struct Context {
    pub seed: u64,
    /// Arguments after the program name, recorded in the manifest.
    pub argv: Vec<String>,
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(Dataset::from_json(&text)?)
}

pub enum Checkpoint {
    Nbe(NbeModel),
    Npe(Box<NpeModel>),
}

/// Accepts a bundle directory or a `train` run directory containing one.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if !path.join(BUNDLE_FILE).exists() && nested.join(BUNDLE_FILE).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let dir = resolve_checkpoint(path);
    let file = dir.join(BUNDLE_FILE);
    let bytes = fs::read(&file).map_err(|e| CliError::io(format!("reading {}", file.display()), e))?;
    let Kind { kind } = serde_json::from_slice(&bytes).map_err(|e| mse_core::Error::Format(format!("{}: {e}", file.display())))?;
    match kind.as_str() {
        "nbe" => Ok(Checkpoint::Nbe(NbeModel::load(&dir)?)),
        "npe" => Ok(Checkpoint::Npe(Box::new(NpeModel::load(&dir)?))),
        other => Err(mse_core::Error::Format(format!("{}: unknown checkpoint kind {other:?}", file.display())).into()),
    }
}

#[derive(Serialize)]
struct Truth {
    theta: ModelParams,
    n0: f64,
    raw_counts: Vec<u64>,
}

pub fn simulate(a: &SimulateArgs, ctx: &Context) -> CliResult<()> {
    let interval = a.censor.interval()?;
    let prior = a.prior.spec()?;
    let design = Design::new(a.k)?;
    let mut rng = rng_from_seed(ctx.seed);
    let (theta, raw_counts) = if a.from_prior {
        let (pair, _) = draw_pair(&prior, &design, interval, &mut rng)?;
        (pair.theta, pair.raw_counts)
    } else {
        let alpha = a
            .alpha
            .ok_or_else(|| CliError::Usage("give --alpha (with optional --beta and --gamma) or --from-prior".into()))?;
        let beta = a.beta.clone().unwrap_or_else(|| vec![0.0; a.k]);
        let gamma = a.gamma.clone().unwrap_or_else(|| vec![0.0; n_pairs(a.k)]);
        if beta.len() != a.k || gamma.len() != n_pairs(a.k) {
            return Err(CliError::Usage(format!(
                "K={} needs {} --beta values and {} --gamma values, got {} and {}",
                a.k,
                a.k,
                n_pairs(a.k),
                beta.len(),
                gamma.len()
            )));
        }
        let theta = ModelParams::new(a.k, alpha, beta, gamma)?;
        let raw = simulate_counts(&theta, &mut rng)?;
        (theta, raw)
    };
    let data = Dataset::censored(a.k, &raw_counts, interval)?;

    let mut run = RunDir::create(&a.out, "simulate", &ctx.argv, &json!({ "args": a, "prior": prior }))?;
    run.seed("simulation", ctx.seed);
    run.write("data.json", data.to_json()?.as_bytes())?;
    let n0 = theta.hidden_population();
    run.write_json("truth.json", &Truth { theta, n0, raw_counts })?;
    run.finish()?;
    println!("simulated K={} dataset ({} censored cells), N0 = {n0:.1}", a.k, data.n_censored());
    Ok(())
}

pub fn train(a: &TrainArgs, ctx: &Context) -> CliResult<()> {
    let interval = a.censor.interval()?;
    let prior = a.prior.spec()?;
    let widths = a.widths()?;
    let config = TrainConfig {
        n_train: a.sims_per_epoch,
        n_validation: a.validation_sims,
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        patience: a.patience,
        seed: ctx.seed,
        adam: AdamConfig { learning_rate: a.learning_rate, ..AdamConfig::default() },
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let nbe_arch = NbeArchitecture { hidden_widths: widths.clone(), ..NbeArchitecture::default() };
    let npe_arch = NpeArchitecture {
        encoder_hidden: widths,
        summary_dim: a.summary_dim,
        n_blocks: a.flow_blocks,
        ..NpeArchitecture::default()
    };
    let architecture = match a.method {
        Method::Nbe => serde_json::to_value(&nbe_arch),
        Method::Npe => serde_json::to_value(&npe_arch),
    }
    .map_err(|e| CliError::Internal(e.to_string()))?;
    let snapshot = json!({ "args": a, "prior": prior, "train": config, "architecture": architecture });
    let mut run = RunDir::create(&a.out, "train", &ctx.argv, &snapshot)?;
    run.seed("training", ctx.seed);

    let ckpt = a.out.join(CHECKPOINT_DIR);
    let log = match a.method {
        Method::Nbe => {
            let (model, log) = train_nbe(&config, &nbe_arch, &prior, a.k, interval)?;
            model.save(&ckpt)?;
            log
        }
        Method::Npe => {
            let (model, log) = train_npe(&config, &npe_arch, &prior, a.k, interval)?;
            model.save(&ckpt)?;
            log
        }
    };
    run.record_dir(CHECKPOINT_DIR)?;
    run.write("training_log.csv", log.to_csv().as_bytes())?;
    run.finish()?;
    for (network, epoch, risk) in &log.best {
        println!("{network}: best validation risk {risk:.5} at epoch {epoch}");
    }
    println!("trained in {:.1}s; {} prior draws rejected", log.seconds, log.rejected_draws);
    Ok(())
}

#[derive(Serialize)]
struct NamedQuantiles {
    name: String,
    median: f64,
    lo: f64,
    hi: f64,
}

pub fn infer(a: &InferArgs, ctx: &Context) -> CliResult<()> {
    let data = read_dataset(&a.data)?;
    let checkpoint = load_checkpoint(&a.checkpoint)?;
    let started = Instant::now();
    let (files, n0, sampled) = match checkpoint {
        Checkpoint::Nbe(model) => {
            let est = model.estimate(&data)?;
            let (m, lo, hi) = (est.median.to_vec(), est.lo.to_vec(), est.hi.to_vec());
            let parameters: Vec<NamedQuantiles> = ModelParams::names(data.k())
                .into_iter()
                .enumerate()
                .map(|(j, name)| NamedQuantiles { name, median: m[j], lo: lo[j], hi: hi[j] })
                .collect();
            let seconds = started.elapsed().as_secs_f64();
            let estimate =
                json!({ "method": "nbe", "taus": est.taus, "parameters": parameters, "n0": est.n0, "seconds": seconds });
            (vec![("estimate.json", pretty(&estimate)?)], (est.n0.median, est.n0.lo, est.n0.hi), false)
        }
        Checkpoint::Npe(model) => {
            if a.samples == 0 {
                return Err(CliError::Usage("--samples must be at least 1".into()));
            }
            let out = model.sample_posterior(&data, a.samples, ctx.seed)?;
            let summary = out.samples.summary();
            let seconds = started.elapsed().as_secs_f64();
            let n0 = (summary.n0.median, summary.n0.lo95, summary.n0.hi95);
            let summary = json!({
                "method": "npe",
                "n_samples": a.samples,
                "acceptance_rate": out.acceptance_rate,
                "proposals": out.proposals,
                "summary": summary,
                "seconds": seconds,
            });
            (vec![("samples.csv", out.samples.to_csv()), ("summary.json", pretty(&summary)?)], n0, true)
        }
    };

    let mut run = RunDir::create(&a.out, "infer", &ctx.argv, &json!({ "args": a }))?;
    if sampled {
        run.seed("sampling", ctx.seed);
    }
    run.input(&resolve_checkpoint(&a.checkpoint))?;
    run.input(&a.data)?;
    for (name, text) in files {
        run.write(name, text.as_bytes())?;
    }
    run.finish()?;
    println!("N0 = {:.1} (95% interval {:.1} to {:.1})", n0.0, n0.1, n0.2);
    Ok(())
}

fn pretty(value: &serde_json::Value) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))
}

#[derive(Serialize)]
struct McmcOutput {
    mcmc: mse_core::classical::McmcSummary,
    posterior: PosteriorSummary,
}

pub fn mcmc(a: &McmcArgs, ctx: &Context) -> CliResult<()> {
    let data = read_dataset(&a.data)?;
    let prior = a.prior.spec()?;
    let config = a.chains.config(ctx.seed)?;
    let result = run_mcmc(&data, &prior, &config)?;

    let mut run = RunDir::create(&a.out, "mcmc", &ctx.argv, &json!({ "args": a, "prior": prior, "mcmc": config }))?;
    run.seed("chains", ctx.seed);
    run.input(&a.data)?;
    for c in 0..result.chains.len() {
        run.write(&format!("chain_{c}.csv"), result.chain_csv(c, config.n_burnin).as_bytes())?;
    }
    let posterior = result.posterior_samples(data.k())?.summary();
    let n0 = posterior.n0.clone();
    run.write_json("summary.json", &McmcOutput { mcmc: result.summary(MCMC_SAMPLER), posterior })?;
    run.finish()?;

    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let max_rhat = result.max_rhat();
    println!(
        "N0 = {:.1} (95% interval {:.1} to {:.1}); max R-hat {max_rhat:.4}, {}",
        n0.median,
        n0.lo95,
        n0.hi95,
        if result.converged { "converged" } else { "NOT converged" }
    );
    if a.strict && !result.converged {
        return Err(CliError::NotConverged { max_rhat, out: a.out.display().to_string() });
    }
    Ok(())
}

#[derive(Serialize)]
struct MleOutput {
    result: MleResult,
    n0: NamedQuantiles,
}

pub fn mle(a: &MleArgs, ctx: &Context) -> CliResult<()> {
    let data = read_dataset(&a.data)?;
    let config = MleConfig { n_starts: a.starts, seed: ctx.seed, ..MleConfig::default() };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let result = fit_mle_with(&data, None, &config)?;
    let (median, lo, hi) = result.n0_interval();

    let mut run = RunDir::create(&a.out, "mle", &ctx.argv, &json!({ "args": a, "mle": config }))?;
    run.seed("starts", ctx.seed);
    run.input(&a.data)?;
    let unreliable = result.unreliable;
    run.write_json("mle.json", &MleOutput { result, n0: NamedQuantiles { name: "n0".into(), median, lo, hi } })?;
    run.finish()?;
    println!("N0 = {median:.1} (Wald 95% interval {lo:.1} to {hi:.1})");
    if unreliable {
        eprintln!("warning: observed information is singular; some parameters are not identified");
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, ctx: &Context) -> CliResult<()> {
    if a.checkpoints.is_empty() && !a.with_mcmc && !a.with_mle {
        return Err(CliError::Usage("nothing to evaluate: give --checkpoints, --with-mcmc or --with-mle".into()));
    }
    let interval = a.censor.interval()?;
    let prior = a.prior.spec()?;
    let mcmc_config = a.chains.config(derive_seed(ctx.seed, 2))?;
    let checkpoints: Vec<Checkpoint> = a.checkpoints.iter().map(|p| load_checkpoint(p)).collect::<CliResult<_>>()?;
    let (n_nbe, n_npe) = checkpoints.iter().fold((0, 0), |(b, p), c| match c {
        Checkpoint::Nbe(_) => (b + 1, p),
        Checkpoint::Npe(_) => (b, p + 1),
    });
    if n_nbe > 1 || n_npe > 1 {
        return Err(CliError::Usage("give at most one NBE and one NPE checkpoint".into()));
    }

    let set = make_test_set(&prior, a.k, interval, a.test_sets, ctx.seed)?;
    let mut evaluations: Vec<MethodEvaluation> = Vec::new();
    for checkpoint in &checkpoints {
        evaluations.push(match checkpoint {
            Checkpoint::Nbe(model) => evaluate_nbe(model, &set)?,
            Checkpoint::Npe(model) => evaluate_npe(model, &set, a.samples, &DEFAULT_LEVELS, derive_seed(ctx.seed, 1))?,
        });
    }
    if a.with_mcmc {
        evaluations.push(evaluate_mcmc(&set, &prior, &mcmc_config, &DEFAULT_LEVELS)?);
    }
    if a.with_mle {
        evaluations.push(evaluate_mle(&set)?);
    }
    let refs: Vec<&MethodEvaluation> = evaluations.iter().collect();
    let report = StudyReport::new(&set, &refs);
    let records: Vec<_> = evaluations.iter().flat_map(|e| e.records.iter().cloned()).collect();

    let snapshot = json!({ "args": a, "prior": prior, "mcmc": a.with_mcmc.then_some(&mcmc_config), "levels": DEFAULT_LEVELS });
    let mut run = RunDir::create(&a.out, "evaluate", &ctx.argv, &snapshot)?;
    run.seed("test_set", ctx.seed);
    run.seed("npe_sampling", derive_seed(ctx.seed, 1));
    run.seed("mcmc", mcmc_config.seed);
    for p in &a.checkpoints {
        run.input(&resolve_checkpoint(p))?;
    }
    run.write("test_set.json", set.to_json()?.as_bytes())?;
    run.write("results.csv", results_csv(&records).as_bytes())?;
    run.write_json("report.json", &report)?;
    run.finish()?;

    println!("{:<6} {:>10} {:>8} {:>10} {:>6}", "method", "bias", "MAPE", "RMSE", "ECP95");
    for row in &report.rows {
        println!(
            "{:<6} {:>10.1} {:>8.3} {:>10.1} {:>6.3}",
            row.method, row.bias, row.mape_fraction, row.rmse, row.ecp95
        );
    }
    Ok(())
}

pub fn ppc(a: &PpcArgs, ctx: &Context) -> CliResult<()> {
    let model = match load_checkpoint(&a.checkpoint)? {
        Checkpoint::Npe(model) => model,
        Checkpoint::Nbe(_) => return Err(CliError::Usage("ppc needs an NPE checkpoint".into())),
    };
    let data = read_dataset(&a.data)?;
    let ppd = posterior_predictive(&model, &data, a.samples, ctx.seed)?;

    let mut run = RunDir::create(&a.out, "ppc", &ctx.argv, &json!({ "args": a }))?;
    run.seed("replicates", ctx.seed);
    run.input(&resolve_checkpoint(&a.checkpoint))?;
    run.input(&a.data)?;
    run.write_json("ppc.json", &ppd.report)?;
    run.write("histograms.csv", ppd.report.histogram_csv().as_bytes())?;
    run.finish()?;

    let outside: Vec<&str> =
        ppd.report.cells.iter().filter(|c| c.inside == Some(false)).map(|c| c.pattern.as_str()).collect();
    println!(
        "{:.1}% of observed cells inside their 95% predictive interval{}",
        100.0 * ppd.report.coverage,
        if outside.is_empty() { String::new() } else { format!("; outside: {}", outside.join(", ")) }
    );
    Ok(())
}
