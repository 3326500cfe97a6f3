mod args;
mod commands;
mod error;
mod manifest;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Context;
use error::{CliError, CliResult};

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    match run(argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(argv: Vec<OsString>) -> CliResult<ExitCode> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return Ok(ExitCode::from(code));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    let recorded = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    dispatch(&cli, recorded)?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli, mut recorded: Vec<String>) -> CliResult<()> {
    // pin the seed so the manifest replays without the environment
    if !recorded.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
        recorded.extend(["--seed".to_string(), cli.seed.to_string()]);
    }
    let ctx = Context { seed: cli.seed, argv: recorded };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &ctx),
        Command::Train(a) => commands::train(a, &ctx),
        Command::Infer(a) => commands::infer(a, &ctx),
        Command::Mcmc(a) => commands::mcmc(a, &ctx),
        Command::Mle(a) => commands::mle(a, &ctx),
        Command::Evaluate(a) => commands::evaluate(a, &ctx),
        Command::Ppc(a) => commands::ppc(a, &ctx),
        Command::Replay(a) => replay(a),
    }
}

/// Re-runs a recorded command with its output redirected to a new directory.
fn replay(a: &args::ReplayArgs) -> CliResult<()> {
    let recorded = manifest::read_manifest(&a.manifest)?;
    let mut argv = Vec::with_capacity(recorded.args.len());
    let mut it = recorded.args.iter();
    let mut replaced = false;
    while let Some(arg) = it.next() {
        if arg == "--out" {
            it.next();
            argv.extend(["--out".to_string(), a.out.display().to_string()]);
            replaced = true;
        } else if arg.starts_with("--out=") {
            argv.push(format!("--out={}", a.out.display()));
            replaced = true;
        } else {
            argv.push(arg.clone());
        }
    }
    if !replaced {
        return Err(CliError::Usage(format!("manifest for {:?} records no --out argument", recorded.command)));
    }
    let cli = Cli::try_parse_from(std::iter::once("mse".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot record a replay".into()));
    }
    if cli.command.name() != recorded.command {
        return Err(CliError::Usage(format!(
            "manifest command {:?} does not match its arguments ({:?})",
            recorded.command,
            cli.command.name()
        )));
    }
    dispatch(&cli, argv)
}
