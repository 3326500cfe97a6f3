use web_time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{coverage_curve, summarize, MethodRecord, MetricsReport};
use super::testset::{TestCase, TestSet};
use crate::classical::{fit_mle, run_mcmc, McmcConfig};
use crate::error::{invalid, Result};
use crate::model::{CensorInterval, PriorSpec};
use crate::nbe::NbeModel;
use crate::npe::NpeModel;
use crate::samples::{central_interval, quantile_sorted};
use crate::derive_seed;

/// Name recorded for the MCMC baseline in every report.
pub const MCMC_SAMPLER: &str = "adaptive random-walk Metropolis";

/// Records of one method over a test set, with its intervals at every level.
#[derive(Clone, Debug)]
pub struct MethodEvaluation {
    pub records: Vec<MethodRecord>,
    pub levels: Vec<f64>,
    /// `intervals[d][l]`: dataset `d`'s alpha interval at `levels[l]`.
    pub intervals: Vec<Vec<(f64, f64)>>,
    pub report: MetricsReport,
}

impl MethodEvaluation {
    fn new(records: Vec<MethodRecord>, levels: Vec<f64>, intervals: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let mut report = summarize(&records)?;
        if levels.len() > 1 {
            let truths: Vec<f64> = records.iter().map(|r| r.alpha_true).collect();
            report.calibration = Some(coverage_curve(&levels, &intervals, &truths)?);
        }
        Ok(Self { records, levels, intervals, report })
    }
}

fn map_cases<T: Send>(set: &TestSet, f: impl Fn(&TestCase) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        set.cases.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        set.cases.iter().map(f).collect()
    }
}

fn with_level_95(levels: &[f64]) -> Result<Vec<f64>> {
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(invalid("nominal levels must lie in (0, 1)"));
    }
    let mut out = levels.to_vec();
    if !out.iter().any(|l| (l - 0.95).abs() < 1e-12) {
        out.push(0.95);
    }
    Ok(out)
}

fn index_95(levels: &[f64]) -> usize {
    levels.iter().position(|l| (l - 0.95).abs() < 1e-12).expect("0.95 is always present")
}

/// Posterior median and central intervals of alpha from a method's draws.
fn record_from_draws(case: &TestCase, method: &str, mut alpha: Vec<f64>, levels: &[f64], seconds: f64) -> (MethodRecord, Vec<(f64, f64)>) {
    alpha.sort_by(f64::total_cmp);
    let intervals: Vec<(f64, f64)> = levels.iter().map(|&l| central_interval(&alpha, l)).collect();
    let ci = intervals[index_95(levels)];
    let record = MethodRecord::new(case.id, method, case.theta.alpha, quantile_sorted(&alpha, 0.5), ci, seconds);
    (record, intervals)
}

/// NBE point estimates and the interval spanned by its outermost quantile networks.
pub fn evaluate_nbe(model: &NbeModel, set: &TestSet) -> Result<MethodEvaluation> {
    let rows = map_cases(set, |case| {
        let t = Instant::now();
        let e = model.estimate(&case.data)?;
        let seconds = t.elapsed().as_secs_f64();
        let ci = (e.lo.alpha, e.hi.alpha);
        Ok((MethodRecord::new(case.id, "nbe", case.theta.alpha, e.median.alpha, ci, seconds), vec![ci]))
    })?;
    let level = model.taus().last().zip(model.taus().first()).map_or(0.95, |(hi, lo)| hi - lo);
    let (records, intervals) = rows.into_iter().unzip();
    MethodEvaluation::new(records, vec![level], intervals)
}

/// NPE posterior draws per case; the seed of case `i` is derived from `seed` and `i`.
pub fn evaluate_npe(model: &NpeModel, set: &TestSet, n_samples: usize, levels: &[f64], seed: u64) -> Result<MethodEvaluation> {
    let levels = with_level_95(levels)?;
    let rows = map_cases(set, |case| {
        let t = Instant::now();
        let out = model.sample_posterior(&case.data, n_samples, derive_seed(seed, case.id as u64))?;
        let seconds = t.elapsed().as_secs_f64();
        Ok(record_from_draws(case, "npe", out.samples.column(0), &levels, seconds))
    })?;
    let (records, intervals) = rows.into_iter().unzip();
    MethodEvaluation::new(records, levels, intervals)
}

/// MCMC per case, flagging convergence on every record.
pub fn evaluate_mcmc(set: &TestSet, prior: &PriorSpec, config: &McmcConfig, levels: &[f64]) -> Result<MethodEvaluation> {
    let levels = with_level_95(levels)?;
    let rows = map_cases(set, |case| {
        let cfg = McmcConfig { seed: derive_seed(config.seed, case.id as u64), ..config.clone() };
        let t = Instant::now();
        let result = run_mcmc(&case.data, prior, &cfg)?;
        let seconds = t.elapsed().as_secs_f64();
        let (mut record, intervals) = record_from_draws(case, "mcmc", result.pooled_column(0), &levels, seconds);
        record.converged = Some(result.converged);
        Ok((record, intervals))
    })?;
    let (records, intervals) = rows.into_iter().unzip();
    MethodEvaluation::new(records, levels, intervals)
}

/// MLE with Wald intervals for alpha.
pub fn evaluate_mle(set: &TestSet) -> Result<MethodEvaluation> {
    let rows = map_cases(set, |case| {
        let t = Instant::now();
        let fit = fit_mle(&case.data, None)?;
        let seconds = t.elapsed().as_secs_f64();
        let a = &fit.intervals[0];
        let ci = (a.lo, a.hi);
        Ok((MethodRecord::new(case.id, "mle", case.theta.alpha, a.estimate, ci, seconds), vec![ci]))
    })?;
    let (records, intervals) = rows.into_iter().unzip();
    MethodEvaluation::new(records, vec![0.95], intervals)
}

/// One row per method, in the order they were evaluated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyReport {
    pub k: usize,
    pub interval: Option<[u64; 2]>,
    pub n_sets: usize,
    pub test_seed: u64,
    pub rows: Vec<MetricsReport>,
    pub mcmc_sampler: Option<String>,
}

impl StudyReport {
    pub fn new(set: &TestSet, evaluations: &[&MethodEvaluation]) -> Self {
        let rows: Vec<MetricsReport> = evaluations.iter().map(|e| e.report.clone()).collect();
        let has_mcmc = rows.iter().any(|r| r.method == "mcmc");
        Self {
            k: set.k,
            interval: set.interval.map(|c: CensorInterval| [c.lo(), c.hi()]),
            n_sets: set.len(),
            test_seed: set.seed,
            rows,
            mcmc_sampler: has_mcmc.then(|| MCMC_SAMPLER.to_string()),
        }
    }

    pub fn row(&self, method: &str) -> Option<&MetricsReport> {
        self.rows.iter().find(|r| r.method == method)
    }
}
