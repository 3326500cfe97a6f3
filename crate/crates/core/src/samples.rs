//! Posterior draw matrices and their summaries.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::model::{n_params, ModelParams};

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Equal-tailed interval at nominal `level` from sorted draws.
pub fn central_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let tail = 0.5 * (1.0 - level);
    (quantile_sorted(sorted, tail), quantile_sorted(sorted, 1.0 - tail))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl MarginalSummary {
    fn from_values(name: String, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo95, hi95) = central_interval(&sorted, 0.95);
        Self {
            name,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile_sorted(&sorted, 0.5),
            lo95,
            hi95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub parameters: Vec<MarginalSummary>,
    pub n0: MarginalSummary,
}

/// Row-major matrix of posterior draws over the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    k: usize,
    draws: Vec<f64>,
}

impl PosteriorSamples {
    pub fn new(k: usize, draws: Vec<f64>) -> Result<Self> {
        let p = n_params(k);
        if draws.is_empty() || !draws.len().is_multiple_of(p) {
            return Err(mismatch(format!("{} values do not form rows of {p} parameters", draws.len())));
        }
        Ok(Self { k, draws })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        n_params(self.k)
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len() / self.dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.draws
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.draws[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim())
    }

    pub fn params(&self, i: usize) -> ModelParams {
        ModelParams::from_slice(self.k, self.row(i)).expect("row has the model dimension")
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// `exp(alpha)` for every draw.
    pub fn n0(&self) -> Vec<f64> {
        self.rows().map(|r| r[0].exp()).collect()
    }

    pub fn quantile(&self, j: usize, q: f64) -> Result<f64> {
        if j >= self.dim() {
            return Err(invalid(format!("parameter index {j} out of range")));
        }
        Ok(quantile(&self.column(j), q))
    }

    pub fn summary(&self) -> PosteriorSummary {
        let parameters = ModelParams::names(self.k)
            .into_iter()
            .enumerate()
            .map(|(j, name)| MarginalSummary::from_values(name, &self.column(j)))
            .collect();
        PosteriorSummary {
            n_draws: self.n_draws(),
            parameters,
            n0: MarginalSummary::from_values("n0".into(), &self.n0()),
        }
    }

    /// One row per draw: the parameters followed by `n0 = exp(alpha)`.
    pub fn to_csv(&self) -> String {
        let mut out = ModelParams::names(self.k).join(",");
        out.push_str(",n0\n");
        for row in self.rows() {
            for v in row {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", row[0].exp()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolated_quantiles() {
        let xs = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 5.0);
        assert!((quantile(&xs, 0.1) - 1.4).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn csv_has_n0_column() {
        let draws = vec![2.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, 0.5, 3.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.2, 0.3];
        let s = PosteriorSamples::new(2, draws).unwrap();
        assert_eq!(s.n_draws(), 4);
        let csv = s.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "alpha,beta_1,beta_2,gamma_1_2,n0");
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[..4], [2.0, 0.0, 0.0, 0.0]);
        assert!((first[4] - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn summary_of_constant_draws() {
        let s = PosteriorSamples::new(2, [1.5, 0.0, -1.0, 2.0].repeat(10)).unwrap();
        let sum = s.summary();
        assert_eq!(sum.parameters[2].median, -1.0);
        assert_eq!(sum.parameters[2].lo95, -1.0);
        assert!((sum.n0.median - 1.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn ragged_draws_rejected() {
        assert!(PosteriorSamples::new(2, vec![0.0; 5]).is_err());
        assert!(PosteriorSamples::new(2, vec![]).is_err());
    }
}
