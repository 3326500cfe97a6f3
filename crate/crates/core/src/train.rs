//! Pieces shared by the NBE and NPE training loops: configuration,
//! on-the-fly simulation of training pairs, early stopping and the log.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::model::{draw_pair, n_cells, n_params, CensorInterval, Dataset, Design, PriorSpec};
use crate::nn::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Fresh simulations per epoch.
    pub n_train: usize,
    /// Size of the validation set, simulated once.
    pub n_validation: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_validation: 2_000,
            max_epochs: 200,
            batch_size: 128,
            patience: 5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_validation == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(invalid("n_train, n_validation, max_epochs and batch_size must all be at least 1"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Network input width for `k` lists: transformed counts plus mask.
pub fn input_dim(k: usize) -> usize {
    2 * n_cells(k)
}

/// Fixed per-feature standardization of network inputs, fitted once on the
/// validation set. Features that never vary keep unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(dim: usize) -> Self {
        Self { loc: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Column means and standard deviations of `n x dim` row-major `inputs`.
    pub fn fit(inputs: &[f64], dim: usize) -> Self {
        let n = inputs.len() / dim;
        let mut loc = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        if n == 0 {
            return Self { loc, scale };
        }
        for row in inputs.chunks_exact(dim) {
            for (l, x) in loc.iter_mut().zip(row) {
                *l += x;
            }
        }
        loc.iter_mut().for_each(|l| *l /= n as f64);
        let mut var = vec![0.0; dim];
        for row in inputs.chunks_exact(dim) {
            for ((v, x), l) in var.iter_mut().zip(row).zip(&loc) {
                *v += (x - l) * (x - l);
            }
        }
        for (s, v) in scale.iter_mut().zip(&var) {
            let sd = (v / n as f64).sqrt();
            if sd > 1e-6 {
                *s = sd;
            }
        }
        Self { loc, scale }
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.loc.len() != dim || self.scale.len() != dim {
            return Err(mismatch(format!("input scaling has {} features, network expects {dim}", self.loc.len())));
        }
        if self.loc.iter().any(|l| !l.is_finite()) || self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("input scaling needs finite locations and positive scales"));
        }
        Ok(())
    }

    /// Standardizes every row of `inputs` in place.
    pub fn apply(&self, inputs: &mut [f64]) {
        for row in inputs.chunks_exact_mut(self.loc.len()) {
            for ((x, l), s) in row.iter_mut().zip(&self.loc).zip(&self.scale) {
                *x = (*x - l) / s;
            }
        }
    }
}

/// Simulated `(theta, data)` pairs laid out for batched network passes.
#[derive(Clone, Debug)]
pub struct SimulatedBatch {
    pub n: usize,
    pub input_dim: usize,
    pub n_params: usize,
    /// `n x input_dim`, row-major.
    pub inputs: Vec<f64>,
    /// `n x n_params`, row-major.
    pub thetas: Vec<f64>,
    /// Prior draws discarded because a rate overflowed.
    pub rejected: usize,
}

impl SimulatedBatch {
    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn theta_row(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.n_params..(i + 1) * self.n_params]
    }
}

pub fn simulate_batch<R: Rng + ?Sized>(
    prior: &PriorSpec,
    design: &Design,
    interval: Option<CensorInterval>,
    n: usize,
    rng: &mut R,
) -> Result<SimulatedBatch> {
    let k = design.k();
    let mut batch = SimulatedBatch {
        n,
        input_dim: input_dim(k),
        n_params: n_params(k),
        inputs: Vec::with_capacity(n * input_dim(k)),
        thetas: Vec::with_capacity(n * n_params(k)),
        rejected: 0,
    };
    for _ in 0..n {
        let (pair, rejected) = draw_pair(prior, design, interval, rng)?;
        batch.rejected += rejected;
        pair.data.write_network_input(&mut batch.inputs);
        batch.thetas.extend(pair.theta.to_vec());
    }
    Ok(batch)
}

/// Guards inference against data the network was not trained for.
pub(crate) fn check_compatible(k: usize, interval: Option<CensorInterval>, data: &Dataset) -> Result<()> {
    if data.k() != k {
        return Err(mismatch(format!("model was trained for K={k} but the dataset has K={}", data.k())));
    }
    if data.interval() != interval {
        let show = |c: Option<CensorInterval>| c.map_or("none".to_string(), |c| c.to_string());
        return Err(Error::Incompatible(format!(
            "model was trained with censor interval {} but the dataset uses {}",
            show(interval),
            show(data.interval())
        )));
    }
    Ok(())
}

/// Ranges `[start, end)` covering `0..n` in chunks of `size`.
pub(crate) fn minibatches(n: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(size).map(move |s| (s, (s + size).min(n)))
}

/// Tracks the best validation risk and decides when to stop.
#[derive(Clone, Debug)]
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, initial_risk: f64) -> Self {
        Self { patience, best: initial_risk, best_epoch: 0, stale: 0 }
    }

    /// Records an epoch; returns `true` when it is the new best.
    pub fn observe(&mut self, epoch: usize, risk: f64) -> bool {
        if risk < self.best || !self.best.is_finite() && risk.is_finite() {
            self.best = risk;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience.max(1)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub network: String,
    pub epoch: usize,
    /// Mean minibatch risk during the epoch; absent for the untrained epoch 0.
    pub train_risk: Option<f64>,
    pub validation_risk: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub rejected_draws: usize,
    /// `(network, best epoch, best validation risk)`.
    pub best: Vec<(String, usize, f64)>,
    pub seconds: f64,
}

impl TrainingLog {
    pub fn push(&mut self, network: &str, epoch: usize, train_risk: Option<f64>, validation_risk: f64) {
        self.records.push(EpochRecord { network: network.to_string(), epoch, train_risk, validation_risk });
    }

    pub fn validation_risks(&self, network: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.network == network).map(|r| r.validation_risk).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("network,epoch,train_risk,validation_risk\n");
        for r in &self.records {
            let train = r.train_risk.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.network, r.epoch, train, r.validation_risk);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn batch_layout() {
        let design = Design::new(3).unwrap();
        let b = simulate_batch(&PriorSpec::default(), &design, None, 10, &mut rng_from_seed(1)).unwrap();
        assert_eq!(b.inputs.len(), 10 * 14);
        assert_eq!(b.thetas.len(), 10 * 7);
        assert!(b.input_row(3)[7..].iter().all(|&m| m == 0.0));
        assert!((1.0..=10.0).contains(&b.theta_row(9)[0]));
    }

    #[test]
    fn input_scaling_standardizes_columns() {
        let rows = [1.0, 0.0, 3.0, 0.0, 5.0, 0.0];
        let scaling = InputScaling::fit(&rows, 2);
        assert_eq!(scaling.loc, vec![3.0, 0.0]);
        assert!((scaling.scale[0] - (8f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(scaling.scale[1], 1.0);
        let mut x = rows;
        scaling.apply(&mut x);
        assert_eq!(x[2], 0.0);
        assert!((x[0] + x[4]).abs() < 1e-12);
    }

    #[test]
    fn minibatch_ranges_cover_everything() {
        let r: Vec<_> = minibatches(10, 4).collect();
        assert_eq!(r, vec![(0, 4), (4, 8), (8, 10)]);
    }

    #[test]
    fn early_stopping_counts_stale_epochs() {
        let mut es = EarlyStopping::new(2, 1.0);
        assert!(es.observe(1, 0.5));
        assert!(!es.observe(2, 0.6));
        assert!(!es.should_stop());
        assert!(!es.observe(3, 0.5));
        assert!(es.should_stop());
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn log_csv() {
        let mut log = TrainingLog::default();
        log.push("median", 0, None, 2.0);
        log.push("median", 1, Some(1.5), 1.25);
        assert_eq!(log.to_csv(), "network,epoch,train_risk,validation_risk\nmedian,0,,2\nmedian,1,1.5,1.25\n");
        assert_eq!(log.validation_risks("median"), vec![2.0, 1.25]);
    }
}
