use web_time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::study::evaluate_nbe;
use super::testset::{make_test_set, TestSet};
use crate::error::{invalid, Result};
use crate::model::{CensorInterval, PriorSpec};
use crate::nbe::{train_nbe, NbeArchitecture};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of lists K.
    Lists,
    /// Width of every hidden layer.
    Neurons,
    /// Number of hidden layers, each at the base width.
    Layers,
    /// Censoring threshold t; see [`threshold_interval`].
    Threshold,
}

/// `t = 0` means fully observed data; otherwise counts in `[0, t]` are censored.
pub fn threshold_interval(t: u64) -> Option<CensorInterval> {
    (t > 0).then(|| CensorInterval::new(0, t).expect("0 <= t"))
}

/// Everything held fixed while one axis varies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepBase {
    pub prior: PriorSpec,
    pub k: usize,
    pub interval: Option<CensorInterval>,
    pub train: TrainConfig,
    pub arch: NbeArchitecture,
    pub n_test: usize,
    pub test_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub report: MetricsReport,
    /// Per-dataset APE in percent, for box plots.
    pub apes: Vec<f64>,
    pub training_seconds: f64,
    pub best_epochs: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: u64,
    /// A failed value records its error and the sweep moves on.
    pub outcome: std::result::Result<SweepOutcome, String>,
}

fn run_point(base: &SweepBase, arch: &NbeArchitecture, k: usize, interval: Option<CensorInterval>, set: &TestSet) -> Result<SweepOutcome> {
    let t = Instant::now();
    let (model, log) = train_nbe(&base.train, arch, &base.prior, k, interval)?;
    let training_seconds = t.elapsed().as_secs_f64();
    let eval = evaluate_nbe(&model, set)?;
    Ok(SweepOutcome {
        apes: eval.records.iter().map(|r| r.ape).collect(),
        report: eval.report,
        training_seconds,
        best_epochs: log.best.iter().map(|b| b.1).collect(),
    })
}

/// Trains one NBE per value of `axis`, holding everything else at `base`,
/// and evaluates each on the test set shared by all values with the same K.
/// Threshold sweeps re-censor one set of raw draws.
pub fn sensitivity_sweep(axis: SweepAxis, values: &[u64], base: &SweepBase) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(invalid("a sweep needs at least one value"));
    }
    base.train.validate()?;
    let shared = match axis {
        SweepAxis::Lists => None,
        SweepAxis::Threshold => Some(make_test_set(&base.prior, base.k, None, base.n_test, base.test_seed)?),
        _ => Some(make_test_set(&base.prior, base.k, base.interval, base.n_test, base.test_seed)?),
    };
    let width = base.arch.hidden_widths.first().copied().unwrap_or(256);
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let v = value as usize;
        let outcome = (|| {
            if value == 0 && axis != SweepAxis::Threshold {
                return Err(invalid(format!("{axis:?} value must be positive")));
            }
            match axis {
                SweepAxis::Lists => {
                    let set = make_test_set(&base.prior, v, base.interval, base.n_test, base.test_seed)?;
                    run_point(base, &base.arch, v, base.interval, &set)
                }
                SweepAxis::Neurons => {
                    let arch = NbeArchitecture { hidden_widths: vec![v; base.arch.hidden_widths.len()], ..base.arch.clone() };
                    run_point(base, &arch, base.k, base.interval, shared.as_ref().expect("shared set"))
                }
                SweepAxis::Layers => {
                    let arch = NbeArchitecture { hidden_widths: vec![width; v], ..base.arch.clone() };
                    run_point(base, &arch, base.k, base.interval, shared.as_ref().expect("shared set"))
                }
                SweepAxis::Threshold => {
                    let interval = threshold_interval(value);
                    let set = shared.as_ref().expect("shared set").recensor(interval)?;
                    run_point(base, &base.arch, base.k, interval, &set)
                }
            }
        })();
        points.push(SweepPoint { value, outcome: outcome.map_err(|e| e.to_string()) });
    }
    Ok(points)
}
