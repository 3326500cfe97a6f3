use super::dataset::Dataset;
use super::params::ModelParams;
use super::patterns::Design;
use super::poisson::{d_log_interval_prob, ln_factorial, log_interval_prob};
use crate::error::{mismatch, Result};

#[derive(Clone, Debug)]
enum Cell {
    Observed { n: f64, ln_fact: f64 },
    Censored { lo: u64, hi: u64 },
}

/// Log-likelihood of one dataset, prepared once and evaluated many times.
///
/// Uncensored cells contribute `n * eta - exp(eta) - ln n!`; censored cells
/// contribute `log P(lo <= N <= hi)` under the cell's Poisson rate.
#[derive(Clone, Debug)]
pub struct CensoredPoissonLikelihood {
    design: Design,
    cells: Vec<Cell>,
}

impl CensoredPoissonLikelihood {
    pub fn new(data: &Dataset) -> Result<Self> {
        let design = Design::new(data.k())?;
        let cells = data
            .counts()
            .iter()
            .zip(data.mask())
            .map(|(&n, &m)| {
                if m {
                    let c = data.interval().expect("censored cells imply an interval");
                    Cell::Censored { lo: c.lo(), hi: c.hi() }
                } else {
                    Cell::Observed { n: n as f64, ln_fact: ln_factorial(n as u64) }
                }
            })
            .collect();
        Ok(Self { design, cells })
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    pub fn n_params(&self) -> usize {
        self.design.n_params()
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(mismatch(format!(
                "likelihood for K={} needs {} parameters, got {}",
                self.k(),
                self.n_params(),
                theta.len()
            )));
        }
        Ok(())
    }

    fn cell_log_lik(cell: &Cell, eta: f64) -> f64 {
        match *cell {
            Cell::Observed { n, ln_fact } => {
                let rate = eta.exp();
                if n == 0.0 {
                    -rate
                } else {
                    n * eta - rate - ln_fact
                }
            }
            Cell::Censored { lo, hi } => log_interval_prob(lo, hi, eta),
        }
    }

    /// Per-cell contributions for a flat parameter vector.
    pub fn cell_contributions(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let eta = self.design.log_rates(theta);
        Ok(self.cells.iter().zip(&eta).map(|(c, &e)| Self::cell_log_lik(c, e)).collect())
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        Ok(self.eval(theta))
    }

    /// Unchecked evaluation for hot loops; `theta` must have `n_params()` entries.
    pub(crate) fn eval(&self, theta: &[f64]) -> f64 {
        let mut total = 0.0;
        for (c, terms) in self.cells.iter().zip((0..self.cells.len()).map(|i| self.design.cell_terms(i))) {
            let eta: f64 = terms.iter().map(|&i| theta[i]).sum();
            total += Self::cell_log_lik(c, eta);
        }
        total
    }

    /// Log-likelihood and its gradient with respect to the flat parameters.
    pub fn log_likelihood_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        let eta = self.design.log_rates(theta);
        let mut total = 0.0;
        let mut d_eta = Vec::with_capacity(eta.len());
        for (c, &e) in self.cells.iter().zip(&eta) {
            let ll = Self::cell_log_lik(c, e);
            total += ll;
            d_eta.push(match *c {
                Cell::Observed { n, .. } => n - e.exp(),
                Cell::Censored { lo, hi } => d_log_interval_prob(lo, hi, e, ll),
            });
        }
        let mut grad = vec![0.0; theta.len()];
        self.design.accumulate_transpose(&d_eta, &mut grad);
        Ok((total, grad))
    }
}

/// Censored-data log-likelihood of `theta`.
pub fn log_likelihood(data: &Dataset, theta: &ModelParams) -> Result<f64> {
    if theta.k() != data.k() {
        return Err(mismatch(format!("dataset has K={} but parameters have K={}", data.k(), theta.k())));
    }
    CensoredPoissonLikelihood::new(data)?.log_likelihood(&theta.to_vec())
}
