use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mse_core::model::{Dataset, Design};
use mse_core::samples::quantile;
use serde_json::Value;
use tempfile::TempDir;

fn mse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mse"))
        .args(args)
        .current_dir(dir)
        .env_remove("MSE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mse(dir, args);
    assert!(out.status.success(), "mse {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn dataset(path: PathBuf) -> Dataset {
    Dataset::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

const TINY_TRAIN: [&str; 6] = ["--epochs", "2", "--sims-per-epoch", "300", "--validation-sims", "100"];

fn train_tiny(dir: &Path, method: &str, out: &str, extra: &[&str]) {
    let mut args = vec!["train", "--method", method, "--k", "3", "--censor", "0", "10", "--out", out];
    args.extend(TINY_TRAIN);
    args.extend(extra);
    ok(dir, &args);
}

#[test]
fn simulate_from_prior_writes_a_seven_cell_dataset_and_manifest() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["simulate", "--k", "3", "--from-prior", "--censor", "0", "10", "--seed", "7", "--out", "run"]);
    let data = dataset(tmp.path().join("run/data.json"));
    assert_eq!(data.k(), 3);
    assert_eq!(data.n_cells(), 7);
    let manifest = json(tmp.path().join("run/manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seeds"]["simulation"], 7);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert_eq!(outputs, ["data.json", "truth.json"]);
}

#[test]
fn simulate_is_deterministic_given_the_seed() {
    let tmp = TempDir::new().unwrap();
    let args = |out: &'static str| ["simulate", "--k", "2", "--alpha", "3", "--beta", "0", "0", "--gamma", "0", "--seed", "1", "--out", out];
    ok(tmp.path(), &args("a"));
    ok(tmp.path(), &args("b"));
    for f in ["data.json", "truth.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = TempDir::new().unwrap();
    let run = |out: &str, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mse"));
        cmd.args(["simulate", "--k", "3", "--from-prior", "--out", out]).current_dir(tmp.path()).env_remove("MSE_SEED");
        if let Some(v) = env {
            cmd.env("MSE_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
    };
    run("env", Some("99"));
    ok(tmp.path(), &["simulate", "--k", "3", "--from-prior", "--seed", "99", "--out", "flag"]);
    run("none", None);
    let read = |d: &str| fs::read(tmp.path().join(d).join("data.json")).unwrap();
    assert_eq!(read("env"), read("flag"));
    assert_ne!(read("env"), read("none"));
    assert_eq!(json(tmp.path().join("env/manifest.json"))["seeds"]["simulation"], 99);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let cases: [&[&str]; 5] = [
        &["simulate", "--k", "3", "--from-prior", "--censor", "5", "2", "--out", "x"],
        &["simulate", "--k", "2", "--alpha", "3", "--from-prior", "--out", "x"],
        &["simulate", "--k", "2", "--alpha", "3", "--beta", "0", "--out", "x"],
        &["simulate", "--k", "3", "--out", "x"],
        &["train", "--method", "nbe", "--arch", "64,,64", "--out", "x"],
    ];
    for args in cases {
        let out = mse(tmp.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!tmp.path().join("x").exists(), "failed runs leave no output directory");
    assert_eq!(mse(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(mse(tmp.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(mse(tmp.path(), &["mle", "--data", "missing.json", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn mcmc_defaults_and_outputs() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["simulate", "--k", "3", "--alpha", "6", "--beta", "0.3", "-0.2", "0.1", "--seed", "3", "--out", "sim"]);
    ok(tmp.path(), &["mcmc", "--data", "sim/data.json", "--seed", "5", "--out", "mc"]);
    let manifest = json(tmp.path().join("mc/manifest.json"));
    let cfg = &manifest["config"]["mcmc"];
    assert_eq!((cfg["n_chains"].as_u64(), cfg["n_iterations"].as_u64(), cfg["n_burnin"].as_u64()), (Some(4), Some(5000), Some(1000)));
    assert_eq!(manifest["inputs"][0]["path"], "sim/data.json");

    let csv = fs::read_to_string(tmp.path().join("mc/chain_0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iteration,alpha,beta_1,beta_2,beta_3,gamma_1_2,gamma_1_3,gamma_2_3,log_posterior");
    assert_eq!(lines.count(), 4000);
    let summary = json(tmp.path().join("mc/summary.json"));
    assert_eq!(summary["mcmc"]["rhat"].as_array().unwrap().len(), 7);
    assert!(summary["mcmc"]["converged"].as_bool().unwrap());
    assert!(summary["posterior"]["n0"]["median"].as_f64().unwrap() > 0.0);
}

#[test]
fn strict_mcmc_exits_with_two_and_still_writes_results() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["simulate", "--k", "3", "--alpha", "6", "--seed", "3", "--out", "sim"]);
    let out = mse(tmp.path(), &["mcmc", "--data", "sim/data.json", "--iters", "40", "--burnin", "20", "--strict", "--out", "mc"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["chain_0.csv", "chain_3.csv", "summary.json", "manifest.json"] {
        assert!(tmp.path().join("mc").join(f).exists(), "{f} missing");
    }
    assert!(!json(tmp.path().join("mc/summary.json"))["mcmc"]["converged"].as_bool().unwrap());

    // the same run without --strict only reports
    ok(tmp.path(), &["mcmc", "--data", "sim/data.json", "--iters", "40", "--burnin", "20", "--out", "mc2"]);
}

#[test]
fn saturated_mle_interpolates_end_to_end() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["simulate", "--k", "3", "--alpha", "5", "--beta", "0.4", "-0.3", "0.2", "--gamma", "0.1", "0", "-0.2", "--seed", "4", "--out", "sim"]);
    let data = dataset(tmp.path().join("sim/data.json"));
    assert!(data.counts().iter().all(|&n| n > 0));
    ok(tmp.path(), &["mle", "--data", "sim/data.json", "--out", "fit"]);
    let fit = json(tmp.path().join("fit/mle.json"));
    let t = &fit["result"]["theta_hat"];
    let mut theta = vec![t["alpha"].as_f64().unwrap()];
    theta.extend(t["beta"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()));
    theta.extend(t["gamma"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()));
    let rates = Design::new(3).unwrap().log_rates(&theta);
    for (log_rate, &n) in rates.iter().zip(data.counts()) {
        assert!((log_rate.exp() / n as f64 - 1.0).abs() < 1e-6, "rate {} vs count {n}", log_rate.exp());
    }
    let n0 = &fit["n0"];
    assert!(n0["lo"].as_f64().unwrap() < n0["median"].as_f64().unwrap());
}

#[test]
fn train_manifest_records_the_architecture() {
    let tmp = TempDir::new().unwrap();
    train_tiny(tmp.path(), "nbe", "default", &[]);
    let m = json(tmp.path().join("default/manifest.json"));
    assert_eq!(m["config"]["architecture"]["hidden_widths"], serde_json::json!([256, 256, 256]));
    assert_eq!(m["config"]["args"]["sims_per_epoch"], 300);
    assert_eq!(m["config"]["train"]["batch_size"], 128);
    let log = fs::read_to_string(tmp.path().join("default/training_log.csv")).unwrap();
    assert!(log.starts_with("network,epoch,train_risk,validation_risk\n"));
    assert!(tmp.path().join("default/checkpoint/bundle.json").exists());

    train_tiny(tmp.path(), "nbe", "deep", &["--arch", "256,256,256,256"]);
    let m = json(tmp.path().join("deep/manifest.json"));
    assert_eq!(m["config"]["architecture"]["hidden_widths"], serde_json::json!([256, 256, 256, 256]));

    train_tiny(tmp.path(), "npe", "npe", &["--arch", "128"]);
    let m = json(tmp.path().join("npe/manifest.json"));
    assert_eq!(m["config"]["architecture"]["encoder_hidden"], serde_json::json!([128]));
    assert_eq!(m["config"]["architecture"]["summary_dim"], 128);
}

#[test]
fn infer_applies_both_kinds_of_checkpoint() {
    let tmp = TempDir::new().unwrap();
    train_tiny(tmp.path(), "nbe", "nbe", &["--arch", "16,16"]);
    train_tiny(tmp.path(), "npe", "npe", &["--arch", "16", "--summary-dim", "8"]);
    ok(tmp.path(), &["simulate", "--k", "3", "--from-prior", "--censor", "0", "10", "--seed", "21", "--out", "sim"]);

    ok(tmp.path(), &["infer", "--checkpoint", "nbe", "--data", "sim/data.json", "--out", "est"]);
    let est = json(tmp.path().join("est/estimate.json"));
    let n0 = &est["n0"];
    let alpha = &est["parameters"][0];
    assert_eq!(alpha["name"], "alpha");
    assert!((n0["median"].as_f64().unwrap() - alpha["median"].as_f64().unwrap().exp()).abs() < 1e-9 * n0["median"].as_f64().unwrap());
    assert!(n0["lo"].as_f64().unwrap() <= n0["median"].as_f64().unwrap());

    ok(tmp.path(), &["infer", "--checkpoint", "npe/checkpoint", "--data", "sim/data.json", "--samples", "500", "--seed", "2", "--out", "post"]);
    let csv = fs::read_to_string(tmp.path().join("post/samples.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.last(), Some(&"n0"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 500);
    let summary = json(tmp.path().join("post/summary.json"));
    let params = summary["summary"]["parameters"].as_array().unwrap();
    for (j, p) in params.iter().enumerate() {
        let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        assert_eq!(p["median"].as_f64().unwrap(), quantile(&column, 0.5), "{}", header[j]);
    }
    let n0_column: Vec<f64> = rows.iter().map(|r| r[header.len() - 1]).collect();
    assert_eq!(summary["summary"]["n0"]["median"].as_f64().unwrap(), quantile(&n0_column, 0.5));
}

#[test]
fn incompatible_dataset_is_a_usage_error_naming_both_values() {
    let tmp = TempDir::new().unwrap();
    train_tiny(tmp.path(), "nbe", "nbe", &["--arch", "8"]);
    ok(tmp.path(), &["simulate", "--k", "2", "--from-prior", "--censor", "0", "10", "--out", "k2"]);
    let out = mse(tmp.path(), &["infer", "--checkpoint", "nbe", "--data", "k2/data.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('3') && err.contains('2'), "{err}");

    ok(tmp.path(), &["simulate", "--k", "3", "--from-prior", "--censor", "1", "4", "--out", "other"]);
    let out = mse(tmp.path(), &["infer", "--checkpoint", "nbe", "--data", "other/data.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[0, 10]") && err.contains("[1, 4]"), "{err}");
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn ppc_reports_every_cell() {
    let tmp = TempDir::new().unwrap();
    train_tiny(tmp.path(), "npe", "npe", &["--arch", "16", "--summary-dim", "8"]);
    ok(tmp.path(), &["simulate", "--k", "3", "--from-prior", "--censor", "0", "10", "--seed", "8", "--out", "sim"]);
    ok(tmp.path(), &["ppc", "--checkpoint", "npe", "--data", "sim/data.json", "--samples", "100", "--out", "ppc"]);
    let data = dataset(tmp.path().join("sim/data.json"));
    let report = json(tmp.path().join("ppc/ppc.json"));
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 7);
    for (i, cell) in cells.iter().enumerate() {
        if data.is_censored(i) {
            let mass = cell["in_band_mass"].as_f64().expect("censored cells carry in-band mass");
            assert!((0.0..=1.0).contains(&mass));
            assert!(cell["inside"].is_null());
        } else {
            assert!(cell["inside"].is_boolean());
        }
    }
    let hist = fs::read_to_string(tmp.path().join("ppc/histograms.csv")).unwrap();
    assert!(hist.starts_with("pattern,bin_lo,bin_hi,count,"));

    train_tiny(tmp.path(), "nbe", "nbe", &["--arch", "8"]);
    let out = mse(tmp.path(), &["ppc", "--checkpoint", "nbe", "--data", "sim/data.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_writes_artifacts_and_replays() {
    let tmp = TempDir::new().unwrap();
    train_tiny(tmp.path(), "nbe", "nbe", &["--arch", "16"]);
    train_tiny(tmp.path(), "npe", "npe", &["--arch", "16", "--summary-dim", "8"]);
    let args = [
        "--threads", "1", "evaluate", "--checkpoints", "nbe", "npe", "--test-sets", "6", "--k", "3", "--censor", "0", "10",
        "--samples", "200", "--with-mle", "--with-mcmc", "--iters", "300", "--burnin", "100", "--seed", "4", "--out", "ev",
    ];
    ok(tmp.path(), &args);
    let report = json(tmp.path().join("ev/report.json"));
    let methods: Vec<&str> = report["rows"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["nbe", "npe", "mcmc", "mle"]);
    assert_eq!(report["n_sets"], 6);
    let results = fs::read_to_string(tmp.path().join("ev/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 4 * 6);
    assert!(results.starts_with("set_id,method,alpha_true,n0_true,"));

    ok(tmp.path(), &["replay", "ev", "--out", "again"]);
    assert_eq!(fs::read(tmp.path().join("ev/test_set.json")).unwrap(), fs::read(tmp.path().join("again/test_set.json")).unwrap());
    // identical up to the timing column
    let strip = |p: &str| -> Vec<String> {
        fs::read_to_string(tmp.path().join(p)).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    assert_eq!(strip("ev/results.csv"), strip("again/results.csv"));
    let (a, b) = (json(tmp.path().join("ev/manifest.json")), json(tmp.path().join("again/manifest.json")));
    assert_eq!(a["config"]["levels"], b["config"]["levels"]);
    assert_eq!(a["seeds"], b["seeds"]);
    assert_eq!(a["inputs"], b["inputs"]);
}

#[test]
fn replay_reproduces_training_bitwise() {
    let tmp = TempDir::new().unwrap();
    train_tiny(tmp.path(), "npe", "first", &["--arch", "16", "--summary-dim", "8", "--seed", "12"]);
    ok(tmp.path(), &["replay", "first/manifest.json", "--out", "second"]);
    for f in ["checkpoint/bundle.json", "checkpoint/encoder.msenn", "checkpoint/block_4.msenn", "training_log.csv"] {
        let (a, b) = (tmp.path().join("first").join(f), tmp.path().join("second").join(f));
        assert!(a.exists(), "{f} missing");
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{f} differs");
    }
}

#[test]
fn nothing_to_evaluate_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(mse(tmp.path(), &["evaluate", "--test-sets", "3", "--out", "x"]).status.code(), Some(1));
}
