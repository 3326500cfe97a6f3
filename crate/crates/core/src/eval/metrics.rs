use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::samples::quantile;

/// Nominal levels of the calibration curve.
pub const DEFAULT_LEVELS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// Absolute percentage error of the hidden-population estimate, in percent.
pub fn ape(alpha_true: f64, alpha_hat: f64) -> f64 {
    100.0 * ((alpha_true.exp() - alpha_hat.exp()) / alpha_true.exp()).abs()
}

/// One method applied to one test case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub set_id: usize,
    pub method: String,
    pub alpha_true: f64,
    pub n0_true: f64,
    pub alpha_hat: f64,
    pub n0_hat: f64,
    /// 95% interval for alpha.
    pub lo95: f64,
    pub hi95: f64,
    /// Percent.
    pub ape: f64,
    /// Only meaningful for MCMC.
    pub converged: Option<bool>,
    pub seconds: f64,
}

impl MethodRecord {
    pub fn new(set_id: usize, method: &str, alpha_true: f64, alpha_hat: f64, ci: (f64, f64), seconds: f64) -> Self {
        Self {
            set_id,
            method: method.to_string(),
            alpha_true,
            n0_true: alpha_true.exp(),
            alpha_hat,
            n0_hat: alpha_hat.exp(),
            lo95: ci.0,
            hi95: ci.1,
            ape: ape(alpha_true, alpha_hat),
            converged: None,
            seconds,
        }
    }

    pub fn raw_error(&self) -> f64 {
        self.n0_hat - self.n0_true
    }

    pub fn abs_error(&self) -> f64 {
        self.raw_error().abs()
    }

    pub fn covers(&self) -> bool {
        self.lo95 <= self.alpha_true && self.alpha_true <= self.hi95
    }
}

pub const RESULTS_HEADER: &str = "set_id,method,alpha_true,n0_true,alpha_hat,n0_hat,lo95,hi95,ape,converged,seconds";

/// Per-dataset results CSV. Floats use the shortest round-trip representation.
pub fn results_csv(records: &[MethodRecord]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let converged = r.converged.map_or(String::new(), |c| c.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.set_id, r.method, r.alpha_true, r.n0_true, r.alpha_hat, r.n0_hat, r.lo95, r.hi95, r.ape, converged, r.seconds
        ));
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<MethodRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Format("results CSV header does not match".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(Error::Format(format!("expected 11 fields, got {}: {line}", f.len())));
            }
            Ok(MethodRecord {
                set_id: f[0].parse().map_err(|e| Error::Format(format!("set_id: {e}")))?,
                method: f[1].to_string(),
                alpha_true: num(f[2])?,
                n0_true: num(f[3])?,
                alpha_hat: num(f[4])?,
                n0_hat: num(f[5])?,
                lo95: num(f[6])?,
                hi95: num(f[7])?,
                ape: num(f[8])?,
                converged: match f[9] {
                    "" => None,
                    s => Some(s.parse().map_err(|e| Error::Format(format!("converged: {e}")))?),
                },
                seconds: num(f[10])?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub level: f64,
    pub ecp: f64,
}

/// Fraction of datasets whose truth lies in `[lo, hi]`, per nominal level.
/// `intervals[d][l]` is dataset `d`'s interval at `levels[l]`.
pub fn coverage_curve(levels: &[f64], intervals: &[Vec<(f64, f64)>], truths: &[f64]) -> Result<Vec<CoveragePoint>> {
    if intervals.len() != truths.len() {
        return Err(mismatch(format!("{} interval rows for {} truths", intervals.len(), truths.len())));
    }
    if intervals.is_empty() {
        return Err(invalid("coverage needs at least one dataset"));
    }
    if let Some(row) = intervals.iter().find(|r| r.len() != levels.len()) {
        return Err(mismatch(format!("{} intervals for {} levels", row.len(), levels.len())));
    }
    let n = truths.len() as f64;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(l, &level)| {
            let hits = intervals.iter().zip(truths).filter(|(row, &t)| row[l].0 <= t && t <= row[l].1).count();
            CoveragePoint { level, ecp: hits as f64 / n }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApeStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

impl ApeStats {
    fn of(apes: &[f64]) -> Option<Self> {
        (!apes.is_empty()).then(|| ApeStats {
            n: apes.len(),
            mean: apes.iter().sum::<f64>() / apes.len() as f64,
            median: quantile(apes, 0.5),
        })
    }
}

/// Aggregate errors of one method over a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub n: usize,
    /// Mean of `n0_hat - n0_true`.
    pub bias: f64,
    pub mape_percent: f64,
    pub mape_fraction: f64,
    pub median_ape_percent: f64,
    pub rmse: f64,
    pub ecp95: f64,
    pub mean_seconds: f64,
    pub converged_fraction: Option<f64>,
    pub ape_converged: Option<ApeStats>,
    pub ape_unconverged: Option<ApeStats>,
    /// Filled in by the study when intervals at several levels are available.
    pub calibration: Option<Vec<CoveragePoint>>,
}

pub fn summarize(records: &[MethodRecord]) -> Result<MetricsReport> {
    let first = records.first().ok_or_else(|| invalid("cannot summarize zero records"))?;
    if let Some(r) = records.iter().find(|r| r.method != first.method) {
        return Err(invalid(format!("mixed methods {} and {}", first.method, r.method)));
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&MethodRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let apes: Vec<f64> = records.iter().map(|r| r.ape).collect();
    let mape = mean(&|r| r.ape);
    let flagged: Vec<&MethodRecord> = records.iter().filter(|r| r.converged.is_some()).collect();
    let (converged_fraction, ape_converged, ape_unconverged) = if flagged.is_empty() {
        (None, None, None)
    } else {
        let yes: Vec<f64> = flagged.iter().filter(|r| r.converged == Some(true)).map(|r| r.ape).collect();
        let no: Vec<f64> = flagged.iter().filter(|r| r.converged == Some(false)).map(|r| r.ape).collect();
        (Some(yes.len() as f64 / flagged.len() as f64), ApeStats::of(&yes), ApeStats::of(&no))
    };
    Ok(MetricsReport {
        method: first.method.clone(),
        n: records.len(),
        bias: mean(&MethodRecord::raw_error),
        mape_percent: mape,
        mape_fraction: mape / 100.0,
        median_ape_percent: quantile(&apes, 0.5),
        rmse: mean(&|r| r.raw_error().powi(2)).sqrt(),
        ecp95: records.iter().filter(|r| r.covers()).count() as f64 / n,
        mean_seconds: mean(&|r| r.seconds),
        converged_fraction,
        ape_converged,
        ape_unconverged,
        calibration: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ape_hand_values() {
        let a = 100f64.ln();
        assert_eq!(ape(a, a), 0.0);
        assert!((ape(a, 150f64.ln()) - 50.0).abs() < 1e-9);
        assert!((ape(a, 50f64.ln()) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn coverage_extremes() {
        let levels = [0.5, 0.95];
        let truths = [1.0, 2.0, 3.0];
        let wide = vec![vec![(f64::NEG_INFINITY, f64::INFINITY); 2]; 3];
        assert!(coverage_curve(&levels, &wide, &truths).unwrap().iter().all(|p| p.ecp == 1.0));
        let empty = vec![vec![(1.0, 0.0); 2]; 3];
        assert!(coverage_curve(&levels, &empty, &truths).unwrap().iter().all(|p| p.ecp == 0.0));
        assert!(coverage_curve(&levels, &wide[..2], &truths).is_err());
    }

    fn record(id: usize, n0_true: f64, n0_hat: f64) -> MethodRecord {
        MethodRecord::new(id, "nbe", n0_true.ln(), n0_hat.ln(), (0.0, 20.0), 0.001)
    }

    #[test]
    fn perfect_and_symmetric_errors() {
        let perfect = summarize(&[record(0, 100.0, 100.0), record(1, 50.0, 50.0)]).unwrap();
        assert!(perfect.bias.abs() < 1e-9 && perfect.mape_percent < 1e-9 && perfect.rmse < 1e-9);
        let pm = summarize(&[record(0, 100.0, 110.0), record(1, 100.0, 90.0)]).unwrap();
        assert!(pm.bias.abs() < 1e-9);
        assert!((pm.rmse - 10.0).abs() < 1e-9);
        assert!((pm.mape_fraction * 100.0 - pm.mape_percent).abs() < 1e-12);
        assert_eq!(pm.ecp95, 1.0);
    }

    #[test]
    fn summarize_rejects_mixed_and_empty() {
        assert!(summarize(&[]).is_err());
        let mut b = record(1, 10.0, 10.0);
        b.method = "npe".into();
        assert!(summarize(&[record(0, 10.0, 10.0), b]).is_err());
    }

    #[test]
    fn convergence_strata() {
        let mut a = record(0, 100.0, 100.0);
        a.converged = Some(true);
        let mut b = record(1, 100.0, 300.0);
        b.converged = Some(false);
        let s = summarize(&[a, b]).unwrap();
        assert_eq!(s.converged_fraction, Some(0.5));
        assert!((s.ape_unconverged.unwrap().median - 200.0).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trip_reproduces_report(
            rows in proptest::collection::vec((1.0f64..10.0, 0.5f64..11.0, 0.0f64..1.0, proptest::option::of(proptest::bool::ANY)), 1..30)
        ) {
            let records: Vec<MethodRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, &(a, ah, s, c))| {
                    let mut r = MethodRecord::new(i, "mcmc", a, ah, (ah - 0.5, ah + 0.5), s);
                    r.converged = c;
                    r
                })
                .collect();
            let back = parse_results_csv(&results_csv(&records)).unwrap();
            proptest::prop_assert_eq!(&back, &records);
            proptest::prop_assert_eq!(summarize(&back).unwrap(), summarize(&records).unwrap());
            for r in &records {
                proptest::prop_assert!(r.ape >= 0.0);
                proptest::prop_assert!((r.ape - 100.0 * r.abs_error() / r.n0_true).abs() < 1e-9 * (1.0 + r.ape));
            }
        }
    }
}
