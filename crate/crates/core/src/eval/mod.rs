//! The simulation-study harness: shared test sets, point and interval
//! metrics, calibration curves, sensitivity sweeps and timing.

mod metrics;
mod study;
mod sweep;
mod testset;
mod timing;

pub use metrics::{
    ape, coverage_curve, parse_results_csv, results_csv, summarize, ApeStats, CoveragePoint, MethodRecord, MetricsReport,
    DEFAULT_LEVELS, RESULTS_HEADER,
};
pub use study::{evaluate_mcmc, evaluate_mle, evaluate_nbe, evaluate_npe, MethodEvaluation, StudyReport, MCMC_SAMPLER};
pub use sweep::{sensitivity_sweep, threshold_interval, SweepAxis, SweepBase, SweepOutcome, SweepPoint};
pub use testset::{make_test_set, TestCase, TestSet};
pub use timing::{linear_fit, time_repeated, timing_harness, LinearFit, TimingReport, TimingRow, TimingTargets};
