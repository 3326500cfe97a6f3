use rand::Rng;

use super::dataset::{CensorInterval, Dataset};
use super::params::{ModelParams, PriorSpec};
use super::patterns::Design;
use super::poisson;
use crate::error::{Error, Result};

/// Largest Poisson rate the simulator accepts.
pub const MAX_RATE: f64 = poisson::MAX_SAMPLE_RATE;

/// One independent Poisson draw per non-empty capture pattern.
pub fn simulate_counts<R: Rng + ?Sized>(theta: &ModelParams, rng: &mut R) -> Result<Vec<u64>> {
    let design = Design::new(theta.k())?;
    simulate_with_design(&design, &theta.to_vec(), rng)
}

pub(crate) fn simulate_with_design<R: Rng + ?Sized>(design: &Design, theta: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let rates: Vec<f64> = design.log_rates(theta).into_iter().map(f64::exp).collect();
    if let Some(&rate) = rates.iter().find(|r| !(r.is_finite() && **r <= MAX_RATE)) {
        if rate.is_nan() {
            return Err(Error::Numeric("log-rate is not finite".into()));
        }
        return Err(Error::RateOverflow { rate });
    }
    rates.into_iter().map(|r| poisson::sample(r, rng)).collect()
}

/// A prior draw together with its simulated raw and censored data.
#[derive(Clone, Debug)]
pub struct SimulatedPair {
    pub theta: ModelParams,
    pub raw_counts: Vec<u64>,
    pub data: Dataset,
}

/// Draws `(theta, data)` from the prior predictive, redrawing whenever the
/// rates overflow. Returns the pair and the number of rejected draws.
pub fn draw_pair<R: Rng + ?Sized>(
    prior: &PriorSpec,
    design: &Design,
    interval: Option<CensorInterval>,
    rng: &mut R,
) -> Result<(SimulatedPair, usize)> {
    let k = design.k();
    let mut rejected = 0;
    loop {
        let theta = prior.sample(k, rng)?;
        match simulate_with_design(design, &theta.to_vec(), rng) {
            Ok(raw_counts) => {
                let data = Dataset::censored(k, &raw_counts, interval)?;
                return Ok((SimulatedPair { theta, raw_counts, data }, rejected));
            }
            Err(Error::RateOverflow { .. }) => rejected += 1,
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn cell_means_and_dispersion() {
        let theta = ModelParams::new(2, 3.0, vec![0.0; 2], vec![0.0]).unwrap();
        let mut rng = rng_from_seed(1);
        let sims = 10_000;
        let draws: Vec<Vec<u64>> = (0..sims).map(|_| simulate_counts(&theta, &mut rng).unwrap()).collect();
        let lambda = 3f64.exp();
        for cell in 0..3 {
            let xs: Vec<f64> = draws.iter().map(|d| d[cell] as f64).collect();
            let mean = xs.iter().sum::<f64>() / sims as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (sims - 1) as f64;
            let se = (lambda / sims as f64).sqrt();
            assert!((mean - lambda).abs() < 3.0 * se, "cell {cell}: {mean}");
            let dispersion = var / mean;
            assert!((0.9..=1.1).contains(&dispersion), "cell {cell}: {dispersion}");
        }
    }

    #[test]
    fn tiny_rates_are_mostly_zero() {
        let theta = ModelParams::new(3, (1e-4f64).ln(), vec![0.0; 3], vec![0.0; 3]).unwrap();
        let mut rng = rng_from_seed(2);
        let nonzero: u64 = (0..1000).map(|_| simulate_counts(&theta, &mut rng).unwrap().iter().sum::<u64>()).sum();
        assert!(nonzero < 10);
    }

    #[test]
    fn overflow_is_an_error() {
        let theta = ModelParams::new(2, 40.0, vec![0.0; 2], vec![0.0]).unwrap();
        assert!(matches!(simulate_counts(&theta, &mut rng_from_seed(0)), Err(Error::RateOverflow { .. })));
    }

    #[test]
    fn seeded_simulation_is_deterministic() {
        let theta = ModelParams::new(3, 5.0, vec![0.1, 0.2, -0.3], vec![0.0; 3]).unwrap();
        let a = simulate_counts(&theta, &mut rng_from_seed(42)).unwrap();
        let b = simulate_counts(&theta, &mut rng_from_seed(42)).unwrap();
        assert_eq!(a, b);
    }
}
