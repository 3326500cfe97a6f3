//! Poisson sampling and (log) probabilities parameterized by the log-rate.
//!
//! Sampling uses inversion for small rates, Hörmann's PTRS transformed
//! rejection for moderate rates and a rounded normal approximation above
//! [`NORMAL_APPROX_RATE`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

pub const INVERSION_MAX_RATE: f64 = 30.0;
pub const NORMAL_APPROX_RATE: f64 = 1e6;
/// Rates above this are rejected rather than sampled.
pub const MAX_SAMPLE_RATE: f64 = 1e15;
/// Interval probabilities with at most this many terms are summed directly.
pub const DIRECT_SUM_TERMS: u64 = 10_000;

pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// log P(N = n) for N ~ Poisson(exp(log_rate)).
pub fn log_pmf(n: u64, log_rate: f64) -> f64 {
    let rate = log_rate.exp();
    if n == 0 {
        return -rate;
    }
    n as f64 * log_rate - rate - ln_factorial(n)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// log P(lo <= N <= hi), both ends inclusive.
///
/// Never underflows for moderate intervals: the sum is carried out in the log
/// domain. Wider intervals go through the regularized incomplete gamma
/// function and may return `-inf` when the mass is below `f64` resolution.
pub fn log_interval_prob(lo: u64, hi: u64, log_rate: f64) -> f64 {
    debug_assert!(lo <= hi);
    if hi - lo < DIRECT_SUM_TERMS {
        let mut terms = Vec::with_capacity((hi - lo + 1) as usize);
        let mut lp = log_pmf(lo, log_rate);
        terms.push(lp);
        for j in lo + 1..=hi {
            lp += log_rate - (j as f64).ln();
            terms.push(lp);
        }
        return log_sum_exp(&terms);
    }
    let rate = log_rate.exp();
    // P(N <= n) = Q(n + 1, rate)
    let upper = gamma_ur(hi as f64 + 1.0, rate);
    let lower = if lo == 0 { 0.0 } else { gamma_ur(lo as f64, rate) };
    (upper - lower).max(0.0).ln()
}

/// Derivative of [`log_interval_prob`] with respect to the log-rate.
///
/// Uses `rate * pmf(j) = (j + 1) * pmf(j + 1)`, so
/// d/d(eta) log P = [lo * pmf(lo) - (hi + 1) * pmf(hi + 1)] / P.
pub fn d_log_interval_prob(lo: u64, hi: u64, log_rate: f64, log_p: f64) -> f64 {
    let head = if lo == 0 { 0.0 } else { ((lo as f64).ln() + log_pmf(lo, log_rate) - log_p).exp() };
    let tail = if hi == u64::MAX {
        0.0
    } else {
        (((hi + 1) as f64).ln() + log_pmf(hi + 1, log_rate) - log_p).exp()
    };
    head - tail
}

/// Draws one Poisson variate with mean `rate`.
pub fn sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if rate.is_nan() || rate < 0.0 {
        return Err(Error::Numeric(format!("invalid Poisson rate {rate}")));
    }
    if rate > MAX_SAMPLE_RATE {
        return Err(Error::RateOverflow { rate });
    }
    Ok(if rate == 0.0 {
        0
    } else if rate <= INVERSION_MAX_RATE {
        sample_inversion(rate, rng)
    } else if rate <= NORMAL_APPROX_RATE {
        sample_ptrs(rate, rng)
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (rate + rate.sqrt() * z).round().max(0.0) as u64
    })
}

fn sample_inversion<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut p = (-rate).exp();
    let mut cdf = p;
    let mut k = 0u64;
    // the cap only matters when u lands in the rounding gap of the cdf
    while u > cdf && k < 1000 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
    }
    k
}

/// Transformed rejection with squeeze (Hörmann 1993), valid for rate >= 10.
fn sample_ptrs<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let log_rate = rate.ln();
    let smu = rate.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -rate + k * log_rate - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn brute_interval(lo: u64, hi: u64, rate: f64) -> f64 {
        let mut p = (-rate).exp();
        let mut total = 0.0;
        for j in 0..=hi {
            if j > 0 {
                p *= rate / j as f64;
            }
            if j >= lo {
                total += p;
            }
        }
        total.ln()
    }

    #[test]
    fn pmf_matches_naive() {
        let rate: f64 = 2.5;
        let naive = (rate.powi(3) * (-rate).exp() / 6.0).ln();
        assert!((log_pmf(3, rate.ln()) - naive).abs() < 1e-12);
        assert_eq!(log_pmf(0, 0.0), -1.0);
    }

    #[test]
    fn interval_matches_brute_force() {
        for &(lo, hi, rate) in &[(0u64, 10u64, std::f64::consts::E), (1, 4, 3.0), (5, 5, 7.5), (0, 0, 0.1), (3, 40, 20.0)] {
            let got = log_interval_prob(lo, hi, f64::ln(rate));
            assert!((got - brute_interval(lo, hi, rate)).abs() < 1e-12, "{lo} {hi} {rate}");
        }
    }

    #[test]
    fn interval_to_infinity_has_log_prob_zero() {
        let lp = log_interval_prob(0, 1_000_000, 3f64.ln());
        assert!(lp.abs() < 1e-12, "{lp}");
    }

    #[test]
    fn huge_rate_interval_stays_finite() {
        let lp = log_interval_prob(0, 10, 1e10f64.ln());
        assert!(lp.is_finite() && lp < -9e9);
    }

    #[test]
    fn interval_derivative_matches_finite_difference() {
        for &(lo, hi, eta) in &[(0u64, 10u64, 1.0), (1, 4, 0.3), (2, 30, 3.5), (0, 0, -1.0)] {
            let lp = log_interval_prob(lo, hi, eta);
            let h = 1e-6;
            let fd = (log_interval_prob(lo, hi, eta + h) - log_interval_prob(lo, hi, eta - h)) / (2.0 * h);
            let an = d_log_interval_prob(lo, hi, eta, lp);
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{lo} {hi} {eta}: {fd} vs {an}");
        }
    }

    #[test]
    fn sampler_moments() {
        let mut rng = rng_from_seed(5);
        let n = 100_000;
        for &rate in &[0.1, 1.0, 10.0, 100.0, 1e4] {
            let xs: Vec<f64> = (0..n).map(|_| sample(rate, &mut rng).unwrap() as f64).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (rate / n as f64).sqrt();
            // Var of the sample variance for Poisson: (mu4 - sigma^4 (n-3)/(n-1)) / n, mu4 = rate(1 + 3 rate)
            let se_var = ((rate * (1.0 + 3.0 * rate) - rate * rate * (n as f64 - 3.0) / (n as f64 - 1.0)) / n as f64).sqrt();
            assert!((mean - rate).abs() < 4.0 * se_mean, "rate {rate}: mean {mean}");
            assert!((var - rate).abs() < 4.0 * se_var, "rate {rate}: var {var}");
        }
    }

    #[test]
    fn sampler_branches_and_limits() {
        let mut rng = rng_from_seed(9);
        assert_eq!(sample(0.0, &mut rng).unwrap(), 0);
        let big = sample(1e9, &mut rng).unwrap() as f64;
        assert!((big - 1e9).abs() < 6.0 * 1e9f64.sqrt());
        assert!(matches!(sample(2e15, &mut rng), Err(Error::RateOverflow { .. })));
        assert!(sample(f64::NAN, &mut rng).is_err());
    }
}
