use crate::error::{invalid, Error, Result};

/// Split-R̂: every chain is cut into two halves (dropping the middle draw of
/// odd-length chains) and the potential scale reduction factor is computed
/// over the 2m half-chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    gelman_rubin_slices(&chains.iter().map(Vec::as_slice).collect::<Vec<_>>())
}

pub fn gelman_rubin_slices(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(invalid(format!("R-hat needs at least 2 chains, got {}", chains.len())));
    }
    let n = chains[0].len();
    if n < 4 {
        return Err(invalid(format!("R-hat needs chains of length at least 4, got {n}")));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(invalid("R-hat needs chains of equal length"));
    }
    if chains.iter().flat_map(|c| c.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("chain contains a non-finite value".into()));
    }
    let half = n / 2;
    let halves: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[n - half..]]).collect();
    let m = halves.len() as f64;
    let len = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / len).collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = len / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (len - 1.0))
        .sum::<f64>()
        / m;
    if within <= 0.0 {
        return Err(Error::UndefinedStatistic("within-chain variance is zero".into()));
    }
    let var_plus = (len - 1.0) / len * within + between / len;
    Ok((var_plus / within).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use rand_distr::{Distribution, Normal};

    fn normal_chain(mean: f64, n: usize, seed: u64) -> Vec<f64> {
        let d = Normal::new(mean, 1.0).unwrap();
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn iid_chains_near_one() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| normal_chain(0.0, 10_000, s)).collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!((0.999..=1.01).contains(&r), "{r}");
    }

    #[test]
    fn separated_chains_diverge() {
        let chains = vec![normal_chain(0.0, 1000, 1), normal_chain(5.0, 1000, 2)];
        let r = gelman_rubin(&chains).unwrap();
        // between-half variance is about n * 25 / 3 against a within variance of 1
        let n = 500.0;
        let b = n / 3.0 * 4.0 * 6.25;
        let oracle = (((n - 1.0) / n + b / n) / 1.0f64).sqrt();
        assert!(r > 1.5, "{r}");
        assert!((r - oracle).abs() / oracle < 0.1, "{r} vs {oracle}");
    }

    #[test]
    fn constant_chains_are_undefined() {
        let chains = vec![vec![1.0; 10], vec![2.0; 10]];
        assert!(matches!(gelman_rubin(&chains), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn preconditions() {
        assert!(gelman_rubin(&[vec![1.0, 2.0, 3.0, 4.0]]).is_err());
        assert!(gelman_rubin(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn trend_within_one_chain_is_detected() {
        let drift: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0).collect();
        let flat = normal_chain(5.0, 1000, 3);
        assert!(gelman_rubin(&[drift, flat]).unwrap() > 1.5);
    }

    proptest::proptest! {
        #[test]
        fn affine_invariance(a in 0.01f64..100.0, neg in proptest::bool::ANY, b in -1e3f64..1e3, seed in 0u64..1000) {
            let chains: Vec<Vec<f64>> = (0..3).map(|s| normal_chain(s as f64 * 0.3, 200, seed * 7 + s)).collect();
            let a = if neg { -a } else { a };
            let scaled: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|x| a * x + b).collect()).collect();
            let r0 = gelman_rubin(&chains).unwrap();
            let r1 = gelman_rubin(&scaled).unwrap();
            proptest::prop_assert!((r0 - r1).abs() < 1e-9 * r0);
        }
    }
}
