use nalgebra::{DMatrix, DVector};

use super::optim::{newton_ascent, numerical_hessian};
use crate::error::{mismatch, Result};
use crate::model::{CensoredPoissonLikelihood, Dataset, ModelParams, PriorSpec};

/// An unnormalized log-density the sampler can target.
///
/// Returning `-inf` marks a point outside the support; proposals there are
/// always rejected.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// The MSE posterior: censored log-likelihood plus log-prior.
#[derive(Clone, Debug)]
pub struct MsePosterior {
    likelihood: CensoredPoissonLikelihood,
    prior: PriorSpec,
}

impl MsePosterior {
    pub fn new(data: &Dataset, prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        Ok(Self { likelihood: CensoredPoissonLikelihood::new(data)?, prior })
    }

    pub fn k(&self) -> usize {
        self.likelihood.k()
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn likelihood(&self) -> &CensoredPoissonLikelihood {
        &self.likelihood
    }

    /// Log-posterior and its gradient; the gradient is meaningless where the value is `-inf`.
    pub fn log_density_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let lp = self.prior.log_density(x);
        if lp == f64::NEG_INFINITY {
            return (lp, vec![0.0; x.len()]);
        }
        let (ll, mut grad) = match self.likelihood.log_likelihood_and_gradient(x) {
            Ok(v) => v,
            Err(_) => return (f64::NEG_INFINITY, vec![0.0; x.len()]),
        };
        let var = self.prior.effect_sd * self.prior.effect_sd;
        for (g, v) in grad.iter_mut().zip(x).skip(1) {
            *g -= v / var;
        }
        let total = lp + ll;
        (if total.is_nan() { f64::NEG_INFINITY } else { total }, grad)
    }

    /// Posterior mode found by damped Newton ascent from `start`, and the
    /// inverse negative Hessian there (row-major) when it is positive definite.
    pub fn laplace(&self, start: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let f = |x: &[f64]| self.log_density_and_gradient(x);
        let mut mode = start.to_vec();
        newton_ascent(&f, &mut mode, 100, |_, _| {});
        let p = mode.len();
        let info = -numerical_hessian(&f, &mode);
        let cov = info.cholesky().map(|c| c.inverse()).filter(|c| c.iter().all(|v| v.is_finite()));
        (mode, cov.map(|c| c.transpose().as_slice().to_vec()).filter(|v| v.len() == p * p))
    }
}

impl LogDensity for MsePosterior {
    fn dim(&self) -> usize {
        self.likelihood.n_params()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let lp = self.prior.log_density(x);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let ll = self.likelihood.eval(x);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp + ll
        }
    }
}

/// Unnormalized log-posterior; `-inf` when alpha leaves the prior support.
pub fn log_posterior(data: &Dataset, theta: &ModelParams, prior: &PriorSpec) -> Result<f64> {
    if theta.k() != data.k() {
        return Err(mismatch(format!("dataset has K={} but parameters have K={}", data.k(), theta.k())));
    }
    Ok(MsePosterior::new(data, *prior)?.log_density(&theta.to_vec()))
}

/// Least-squares fit of the log-linear predictor to `log(n + 0.5)`.
///
/// Censored cells are replaced by the midpoint of their interval. Used as a
/// cheap, always-finite starting point for the sampler.
pub fn least_squares_start(data: &Dataset) -> Result<Vec<f64>> {
    let lik = CensoredPoissonLikelihood::new(data)?;
    let design = lik.design();
    let (rows, cols) = (design.n_cells(), design.n_params());
    let mut x = DMatrix::<f64>::zeros(rows, cols);
    for r in 0..rows {
        for &c in design.cell_terms(r) {
            x[(r, c)] = 1.0;
        }
    }
    let midpoint = data.interval().map_or(0.0, |c| 0.5 * (c.lo() as f64 + c.hi() as f64));
    let y = DVector::from_iterator(
        rows,
        data.counts().iter().zip(data.mask()).map(|(&n, &m)| if m { midpoint + 0.5 } else { n as f64 + 0.5 }.ln()),
    );
    let svd = x.svd(true, true);
    let beta = svd.solve(&y, 1e-12).map_err(|e| crate::Error::Numeric(e.to_string()))?;
    Ok(beta.iter().copied().collect())
}
