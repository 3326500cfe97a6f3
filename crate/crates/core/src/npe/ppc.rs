use serde::{Deserialize, Serialize};

use super::model::NpeModel;
use crate::error::{invalid, Result};
use crate::model::{enumerate_patterns, simulate_counts, Dataset};
use crate::samples::{central_interval, quantile_sorted};
use crate::{derive_seed, rng_from_seed};

const MAX_BINS: u64 = 30;

/// Integer histogram: bin `i` covers `[edges[i], edges[i + 1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<u64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn from_values(values: &[u64]) -> Self {
        let lo = *values.iter().min().expect("non-empty");
        let hi = *values.iter().max().expect("non-empty");
        let width = (hi - lo + 1).div_ceil(MAX_BINS).max(1);
        let n_bins = ((hi - lo) / width + 1) as usize;
        let edges = (0..=n_bins as u64).map(|i| lo + i * width).collect();
        let mut counts = vec![0; n_bins];
        for &v in values {
            counts[((v - lo) / width) as usize] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub pattern: String,
    pub observed: Option<u64>,
    pub censored: bool,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    /// Whether the observed count lies in its central 95% predictive interval.
    pub inside: Option<bool>,
    /// For censored cells, the share of replicates falling in the censor band.
    pub in_band_mass: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub n_replicates: usize,
    pub cells: Vec<CellCheck>,
    /// Fraction of uncensored cells inside their interval.
    pub coverage: f64,
}

#[derive(Clone, Debug)]
pub struct PosteriorPredictive {
    /// Raw replicated counts before censoring, one vector per posterior draw.
    pub raw: Vec<Vec<u64>>,
    /// The same replicates with the dataset's censor interval applied.
    pub replicates: Vec<Dataset>,
    pub report: PpcReport,
}

/// Simulates one replicate dataset per posterior draw and compares each cell
/// of the observed data with its predictive distribution.
pub fn posterior_predictive(model: &NpeModel, data: &Dataset, n_replicates: usize, seed: u64) -> Result<PosteriorPredictive> {
    if n_replicates == 0 {
        return Err(invalid("at least one replicate is required"));
    }
    let draws = model.sample_posterior(data, n_replicates, derive_seed(seed, 0))?.samples;
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let mut raw = Vec::with_capacity(n_replicates);
    let mut replicates = Vec::with_capacity(n_replicates);
    for i in 0..n_replicates {
        let counts = simulate_counts(&draws.params(i), &mut rng)?;
        replicates.push(Dataset::censored(data.k(), &counts, data.interval())?);
        raw.push(counts);
    }
    let report = summarize(data, &raw)?;
    Ok(PosteriorPredictive { raw, replicates, report })
}

pub fn summarize(data: &Dataset, raw: &[Vec<u64>]) -> Result<PpcReport> {
    let patterns = enumerate_patterns(data.k())?;
    let mut cells = Vec::with_capacity(patterns.len());
    let (mut inside_count, mut observed_cells) = (0, 0);
    for (c, pattern) in patterns.iter().enumerate() {
        let mut values: Vec<u64> = raw.iter().map(|r| r[c]).collect();
        values.sort_unstable();
        let as_f64: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let (lo95, hi95) = central_interval(&as_f64, 0.95);
        let censored = data.is_censored(c);
        let observed = (!censored).then(|| data.counts()[c] as u64);
        let inside = observed.map(|n| lo95 <= n as f64 && n as f64 <= hi95);
        if let Some(flag) = inside {
            observed_cells += 1;
            inside_count += flag as usize;
        }
        let in_band_mass = match (censored, data.interval()) {
            (true, Some(band)) => Some(values.iter().filter(|&&v| band.contains(v)).count() as f64 / values.len() as f64),
            _ => None,
        };
        cells.push(CellCheck {
            pattern: pattern.to_string(),
            observed,
            censored,
            mean: as_f64.iter().sum::<f64>() / as_f64.len() as f64,
            lo95,
            hi95,
            inside,
            in_band_mass,
            histogram: Histogram::from_values(&values),
        });
        debug_assert!(quantile_sorted(&as_f64, 0.5).is_finite());
    }
    let coverage = if observed_cells == 0 { f64::NAN } else { inside_count as f64 / observed_cells as f64 };
    Ok(PpcReport { n_replicates: raw.len(), cells, coverage })
}

impl PpcReport {
    /// Long-format histogram table: one row per cell and bin.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("pattern,bin_lo,bin_hi,count,censored,observed,lo95,hi95,inside,in_band_mass\n");
        for cell in &self.cells {
            for (i, count) in cell.histogram.counts.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    cell.pattern,
                    cell.histogram.edges[i],
                    cell.histogram.edges[i + 1],
                    count,
                    cell.censored,
                    cell.observed.map(|v| v.to_string()).unwrap_or_default(),
                    cell.lo95,
                    cell.hi95,
                    cell.inside.map(|v| v.to_string()).unwrap_or_default(),
                    cell.in_band_mass.map(|v| v.to_string()).unwrap_or_default(),
                ));
            }
        }
        out
    }
}
