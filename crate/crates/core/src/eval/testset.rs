use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{draw_pair, CensorInterval, Dataset, Design, ModelParams, PriorSpec};
use crate::{derive_seed, rng_from_seed};

/// One evaluation case. The raw counts are kept so the same draws can be
/// re-censored at another interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TestCase {
    pub id: usize,
    pub theta: ModelParams,
    pub raw_counts: Vec<u64>,
    pub data: Dataset,
}

/// A fixed set of prior-predictive draws shared by every method under comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSet {
    pub k: usize,
    pub interval: Option<CensorInterval>,
    pub prior: PriorSpec,
    pub seed: u64,
    /// Draws redrawn because a cell rate overflowed.
    pub rejected: usize,
    pub cases: Vec<TestCase>,
}

#[derive(Serialize, Deserialize)]
struct CaseFile {
    id: usize,
    theta: ModelParams,
    raw_counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct TestSetFile {
    k: usize,
    interval: Option<[u64; 2]>,
    prior: PriorSpec,
    seed: u64,
    rejected: usize,
    cases: Vec<CaseFile>,
}

/// Draws `n_sets` independent `(theta, data)` pairs; case `i` uses its own
/// seed stream, so any single case can be regenerated in isolation.
pub fn make_test_set(prior: &PriorSpec, k: usize, interval: Option<CensorInterval>, n_sets: usize, seed: u64) -> Result<TestSet> {
    if n_sets == 0 {
        return Err(invalid("a test set needs at least one case"));
    }
    prior.validate()?;
    let design = Design::new(k)?;
    let mut rejected = 0;
    let mut cases = Vec::with_capacity(n_sets);
    for id in 0..n_sets {
        let mut rng = rng_from_seed(derive_seed(seed, id as u64));
        let (pair, r) = draw_pair(prior, &design, interval, &mut rng)?;
        rejected += r;
        cases.push(TestCase { id, theta: pair.theta, raw_counts: pair.raw_counts, data: pair.data });
    }
    Ok(TestSet { k, interval, prior: *prior, seed, rejected, cases })
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// The same parameter and count draws observed through another interval.
    pub fn recensor(&self, interval: Option<CensorInterval>) -> Result<TestSet> {
        let cases = self
            .cases
            .iter()
            .map(|c| {
                Ok(TestCase { data: Dataset::censored(self.k, &c.raw_counts, interval)?, ..c.clone() })
            })
            .collect::<Result<_>>()?;
        Ok(TestSet { interval, cases, ..self.clone() })
    }

    /// Keeps the cases whose true N0 = exp(alpha) lies in `[lo, hi]`.
    pub fn filter_n0(&self, lo: f64, hi: f64) -> TestSet {
        let cases = self.cases.iter().filter(|c| (lo..=hi).contains(&c.theta.alpha.exp())).cloned().collect();
        TestSet { cases, ..self.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TestSetFile {
            k: self.k,
            interval: self.interval.map(|c| [c.lo(), c.hi()]),
            prior: self.prior,
            seed: self.seed,
            rejected: self.rejected,
            cases: self
                .cases
                .iter()
                .map(|c| CaseFile { id: c.id, theta: c.theta.clone(), raw_counts: c.raw_counts.clone() })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<TestSet> {
        let file: TestSetFile = serde_json::from_str(s)?;
        let interval = file.interval.map(|[lo, hi]| CensorInterval::new(lo, hi)).transpose()?;
        let cases = file
            .cases
            .into_iter()
            .map(|c| {
                if c.theta.k() != file.k {
                    return Err(crate::error::mismatch(format!("case {} has K={}, set has K={}", c.id, c.theta.k(), file.k)));
                }
                let data = Dataset::censored(file.k, &c.raw_counts, interval)?;
                Ok(TestCase { id: c.id, theta: c.theta, raw_counts: c.raw_counts, data })
            })
            .collect::<Result<_>>()?;
        Ok(TestSet { k: file.k, interval, prior: file.prior, seed: file.seed, rejected: file.rejected, cases })
    }
}
