//! Neural Bayes estimators: one network per quantile level, mapping the
//! network input of a dataset straight to marginal posterior quantiles.

use std::fs;
use std::path::Path;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::io::write_atomic;
use crate::model::{n_params, CensorInterval, Dataset, Design, ModelParams, PriorSpec};
use crate::nn::{
    deserialize, serialize, AdamState, CheckpointMetadata, DenseNetwork, DenseNetworkSpec, InitScheme, LossKind,
    OutputActivation,
};
use crate::train::{
    check_compatible, input_dim, minibatches, simulate_batch, EarlyStopping, InputScaling, SimulatedBatch, TrainConfig,
    TrainingLog,
};
use crate::{derive_seed, rng_from_seed};

pub const DEFAULT_TAUS: [f64; 3] = [0.025, 0.5, 0.975];
pub const BUNDLE_FILE: &str = "bundle.json";

/// Mean absolute error over the parameter components.
pub fn loss_l1(theta_true: &ModelParams, theta_hat: &ModelParams) -> Result<f64> {
    let (t, h) = paired(theta_true, theta_hat)?;
    Ok(t.iter().zip(&h).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64)
}

/// Pinball loss `(hat - true)(1{hat > true} - tau)` averaged over components.
pub fn loss_quantile(tau: f64, theta_true: &ModelParams, theta_hat: &ModelParams) -> Result<f64> {
    check_tau(tau)?;
    let (t, h) = paired(theta_true, theta_hat)?;
    Ok(t.iter().zip(&h).map(|(&a, &b)| pinball(tau, a, b)).sum::<f64>() / t.len() as f64)
}

fn paired(a: &ModelParams, b: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.dim() != b.dim() {
        return Err(mismatch(format!("parameter vectors of length {} and {}", a.dim(), b.dim())));
    }
    Ok((a.to_vec(), b.to_vec()))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("quantile level must lie in (0, 1), got {tau}")))
    }
}

fn pinball(tau: f64, truth: f64, hat: f64) -> f64 {
    let d = hat - truth;
    d * (if d > 0.0 { 1.0 } else { 0.0 } - tau)
}

/// The loss each quantile level is trained with: absolute error for the
/// median, pinball loss otherwise.
pub fn loss_for_tau(tau: f64) -> LossKind {
    if tau == 0.5 {
        LossKind::Absolute
    } else {
        LossKind::Quantile { tau }
    }
}

/// Per-row loss of `pred` against `target` (each `n x p`), summed over rows.
/// When `grad` is given, `scale * dLoss/dpred` is written into it.
pub(crate) fn batch_loss(loss: LossKind, pred: &[f64], target: &[f64], p: usize, grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let inv_p = 1.0 / p as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (idx, (&hat, &truth)) in pred.iter().zip(target).enumerate() {
        let d = hat - truth;
        let (value, slope) = match loss {
            LossKind::Absolute => (d.abs(), d.signum() * (d != 0.0) as u8 as f64),
            LossKind::Quantile { tau } => (pinball(tau, truth, hat), if d > 0.0 { 1.0 - tau } else { -tau }),
            LossKind::NegLogLikelihood => unreachable!("not a point-estimate loss"),
        };
        total += value * inv_p;
        if let Some(g) = grad.as_deref_mut() {
            g[idx] = slope * inv_p * scale;
        }
    }
    total
}

/// Mean risk over `n` rows and its gradient with respect to the network weights.
pub fn risk_and_gradient(net: &DenseNetwork, loss: LossKind, inputs: &[f64], thetas: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    let p = net.output_dim();
    if inputs.len() != n * net.input_dim() || thetas.len() != n * p {
        return Err(mismatch("inputs or targets do not match the network shape"));
    }
    let cache = net.forward_train(inputs, n);
    let mut upstream = vec![0.0; n * p];
    let total = batch_loss(loss, cache.output(), thetas, p, Some(&mut upstream), 1.0 / n as f64);
    let mut grad = vec![0.0; net.n_params()];
    net.backward_batch(&cache, &upstream, &mut grad, None);
    Ok((total / n as f64, grad))
}

/// Mean risk of a network over a simulated batch, evaluated in chunks.
fn batch_risk(net: &DenseNetwork, loss: LossKind, batch: &SimulatedBatch) -> f64 {
    let mut total = 0.0;
    for (s, e) in minibatches(batch.n, 1024) {
        let out = net.forward_batch(&batch.inputs[s * batch.input_dim..e * batch.input_dim], e - s);
        total += batch_loss(loss, &out, &batch.thetas[s * batch.n_params..e * batch.n_params], batch.n_params, None, 1.0);
    }
    total / batch.n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbeArchitecture {
    pub hidden_widths: Vec<usize>,
    pub taus: Vec<f64>,
    /// Standardize each input feature with statistics of the validation set.
    pub scale_inputs: bool,
}

impl Default for NbeArchitecture {
    fn default() -> Self {
        Self { hidden_widths: vec![256; 3], taus: DEFAULT_TAUS.to_vec(), scale_inputs: true }
    }
}

impl NbeArchitecture {
    fn validate(&self) -> Result<()> {
        for &tau in &self.taus {
            check_tau(tau)?;
        }
        if !self.taus.windows(2).all(|w| w[0] < w[1]) || !self.taus.contains(&0.5) || self.taus.len() < 3 {
            return Err(invalid("quantile levels must be increasing, include 0.5 and have at least three entries"));
        }
        Ok(())
    }
}

/// Output layer of every quantile network: bounded alpha, free effects.
pub fn output_activations(prior: &PriorSpec, k: usize) -> Vec<OutputActivation> {
    let mut acts = vec![OutputActivation::Identity; n_params(k)];
    acts[0] = OutputActivation::ShiftedSigmoid { lo: prior.alpha_lo, hi: prior.alpha_hi };
    acts
}

pub fn network_name(tau: f64) -> String {
    format!("tau_{tau}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct NbeModel {
    k: usize,
    prior: PriorSpec,
    interval: Option<CensorInterval>,
    taus: Vec<f64>,
    input_scaling: InputScaling,
    networks: Vec<DenseNetwork>,
    training_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct N0Estimate {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbeEstimate {
    pub taus: Vec<f64>,
    pub median: ModelParams,
    pub lo: ModelParams,
    pub hi: ModelParams,
    pub n0: N0Estimate,
    /// Network outputs before per-component sorting, one row per level.
    pub raw: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    kind: String,
    k: usize,
    prior: PriorSpec,
    censor_interval: Option<CensorInterval>,
    taus: Vec<f64>,
    training_seed: u64,
    input_scaling: InputScaling,
    networks: Vec<String>,
}

impl NbeModel {
    pub fn new(
        k: usize,
        prior: PriorSpec,
        interval: Option<CensorInterval>,
        taus: Vec<f64>,
        input_scaling: InputScaling,
        networks: Vec<DenseNetwork>,
        training_seed: u64,
    ) -> Result<Self> {
        NbeArchitecture { hidden_widths: vec![], taus: taus.clone(), scale_inputs: true }.validate()?;
        input_scaling.validate(input_dim(k))?;
        if networks.len() != taus.len() {
            return Err(mismatch(format!("{} networks for {} quantile levels", networks.len(), taus.len())));
        }
        for net in &networks {
            if net.input_dim() != input_dim(k) || net.output_dim() != n_params(k) {
                return Err(mismatch(format!("network shape does not fit K={k}")));
            }
        }
        Ok(Self { k, prior, interval, taus, input_scaling, networks, training_seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn interval(&self) -> Option<CensorInterval> {
        self.interval
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn input_scaling(&self) -> &InputScaling {
        &self.input_scaling
    }

    pub fn networks(&self) -> &[DenseNetwork] {
        &self.networks
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    /// One forward pass per quantile level. Components are sorted across
    /// levels so the reported quantiles never cross.
    pub fn estimate(&self, data: &Dataset) -> Result<NbeEstimate> {
        check_compatible(self.k, self.interval, data)?;
        let mut input = data.network_input();
        self.input_scaling.apply(&mut input);
        let raw: Vec<Vec<f64>> = self.networks.iter().map(|n| n.forward(&input)).collect::<Result<_>>()?;
        let p = n_params(self.k);
        let mut sorted = raw.clone();
        let mut column = vec![0.0; self.taus.len()];
        for j in 0..p {
            for (c, row) in column.iter_mut().zip(&raw) {
                *c = row[j];
            }
            column.sort_by(f64::total_cmp);
            for (row, &c) in sorted.iter_mut().zip(&column) {
                row[j] = c;
            }
        }
        let mid = self.taus.iter().position(|&t| t == 0.5).expect("validated");
        let to_params = |row: &[f64]| ModelParams::from_slice(self.k, row);
        let median = to_params(&sorted[mid])?;
        let lo = to_params(&sorted[0])?;
        let hi = to_params(sorted.last().unwrap())?;
        let n0 = N0Estimate { median: median.alpha.exp(), lo: lo.alpha.exp(), hi: hi.alpha.exp() };
        Ok(NbeEstimate { taus: self.taus.clone(), median, lo, hi, n0, raw })
    }

    fn metadata(&self, tau: f64) -> CheckpointMetadata {
        CheckpointMetadata {
            k: self.k,
            prior: self.prior,
            censor_interval: self.interval,
            training_seed: self.training_seed,
            loss: loss_for_tau(tau),
            role: "nbe_quantile".into(),
        }
    }

    /// Writes `bundle.json` and one checkpoint per quantile level into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (tau, net) in self.taus.iter().zip(&self.networks) {
            let file = format!("{}.msenn", network_name(*tau));
            write_atomic(&dir.join(&file), &serialize(net, &self.metadata(*tau))?)?;
            files.push(file);
        }
        let header = BundleHeader {
            kind: "nbe".into(),
            k: self.k,
            prior: self.prior,
            censor_interval: self.interval,
            taus: self.taus.clone(),
            training_seed: self.training_seed,
            input_scaling: self.input_scaling.clone(),
            networks: files,
        };
        write_atomic(&dir.join(BUNDLE_FILE), serde_json::to_string_pretty(&header)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: BundleHeader = serde_json::from_slice(&fs::read(dir.join(BUNDLE_FILE))?)
            .map_err(|e| Error::Format(format!("{}: {e}", BUNDLE_FILE)))?;
        if header.kind != "nbe" {
            return Err(Error::Format(format!("bundle holds a '{}' model, not an NBE", header.kind)));
        }
        let mut networks = Vec::new();
        for (file, tau) in header.networks.iter().zip(&header.taus) {
            let (net, meta) = deserialize(&fs::read(dir.join(file))?)?;
            if meta.k != header.k || meta.censor_interval != header.censor_interval || meta.loss != loss_for_tau(*tau) {
                return Err(Error::Format(format!("checkpoint {file} disagrees with {BUNDLE_FILE}")));
            }
            networks.push(net);
        }
        Self::new(header.k, header.prior, header.censor_interval, header.taus, header.input_scaling, networks, header.training_seed)
    }
}

struct Trainee {
    name: String,
    loss: LossKind,
    net: DenseNetwork,
    adam: AdamState,
    stopping: EarlyStopping,
    best_weights: Vec<f64>,
    active: bool,
}

impl Trainee {
    fn train_epoch(&mut self, batch: &SimulatedBatch, batch_size: usize) -> Result<f64> {
        let (d, p) = (batch.input_dim, batch.n_params);
        let mut grad = vec![0.0; self.net.n_params()];
        let mut total = 0.0;
        for (s, e) in minibatches(batch.n, batch_size) {
            let rows = e - s;
            let cache = self.net.forward_train(&batch.inputs[s * d..e * d], rows);
            let mut upstream = vec![0.0; rows * p];
            total += batch_loss(self.loss, cache.output(), &batch.thetas[s * p..e * p], p, Some(&mut upstream), 1.0 / rows as f64);
            grad.fill(0.0);
            self.net.backward_batch(&cache, &upstream, &mut grad, None);
            self.adam.step(self.net.weights_mut().as_mut_slice(), &grad);
        }
        if !self.net.weights().is_finite() {
            return Err(Error::Numeric(format!("network {} diverged to non-finite weights", self.name)));
        }
        Ok(total / batch.n as f64)
    }
}

#[cfg(feature = "parallel")]
fn each_trainee(trainees: &mut [Trainee], f: impl Fn(&mut Trainee) -> Result<()> + Sync + Send) -> Result<()> {
    use rayon::prelude::*;
    trainees.par_iter_mut().filter(|t| t.active).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn each_trainee(trainees: &mut [Trainee], f: impl Fn(&mut Trainee) -> Result<()>) -> Result<()> {
    trainees.iter_mut().filter(|t| t.active).map(f).collect()
}

/// Trains one network per quantile level on freshly simulated pairs each
/// epoch, keeping for every level the weights with the lowest validation risk.
pub fn train_nbe(
    config: &TrainConfig,
    arch: &NbeArchitecture,
    prior: &PriorSpec,
    k: usize,
    interval: Option<CensorInterval>,
) -> Result<(NbeModel, TrainingLog)> {
    config.validate()?;
    arch.validate()?;
    prior.validate()?;
    let start = Instant::now();
    let design = Design::new(k)?;
    let mut log = TrainingLog::default();
    let mut validation = simulate_batch(prior, &design, interval, config.n_validation, &mut rng_from_seed(derive_seed(config.seed, 0)))?;
    log.rejected_draws += validation.rejected;
    let scaling = if arch.scale_inputs {
        InputScaling::fit(&validation.inputs, validation.input_dim)
    } else {
        InputScaling::identity(validation.input_dim)
    };
    scaling.apply(&mut validation.inputs);

    let spec = DenseNetworkSpec::new(input_dim(k), arch.hidden_widths.clone(), output_activations(prior, k))?;
    let mut trainees = Vec::new();
    for (i, &tau) in arch.taus.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(config.seed, 1 + i as u64));
        let net = DenseNetwork::init(spec.clone(), InitScheme::HeUniform, &mut rng)?;
        let loss = loss_for_tau(tau);
        let risk = batch_risk(&net, loss, &validation);
        let name = network_name(tau);
        log.push(&name, 0, None, risk);
        trainees.push(Trainee {
            name,
            loss,
            adam: AdamState::new(net.n_params(), config.adam),
            stopping: EarlyStopping::new(config.patience, risk),
            best_weights: net.weights().as_slice().to_vec(),
            net,
            active: true,
        });
    }

    for epoch in 1..=config.max_epochs {
        if trainees.iter().all(|t| !t.active) {
            break;
        }
        let mut rng = rng_from_seed(derive_seed(config.seed, 1000 + epoch as u64));
        let mut batch = simulate_batch(prior, &design, interval, config.n_train, &mut rng)?;
        log.rejected_draws += batch.rejected;
        scaling.apply(&mut batch.inputs);
        let results = std::sync::Mutex::new(Vec::new());
        each_trainee(&mut trainees, |t| {
            let train_risk = t.train_epoch(&batch, config.batch_size)?;
            let val_risk = batch_risk(&t.net, t.loss, &validation);
            if t.stopping.observe(epoch, val_risk) {
                t.best_weights.copy_from_slice(t.net.weights().as_slice());
            }
            if t.stopping.should_stop() {
                t.active = false;
            }
            results.lock().unwrap().push((t.name.clone(), train_risk, val_risk));
            Ok(())
        })?;
        let mut results = results.into_inner().unwrap();
        results.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, train, val) in results {
            log.push(&name, epoch, Some(train), val);
        }
    }

    let mut networks = Vec::new();
    for mut t in trainees {
        t.net.weights_mut().as_mut_slice().copy_from_slice(&t.best_weights);
        log.best.push((t.name, t.stopping.best_epoch(), t.stopping.best()));
        networks.push(t.net);
    }
    log.seconds = start.elapsed().as_secs_f64();
    let model = NbeModel::new(k, *prior, interval, arch.taus.clone(), scaling, networks, config.seed)?;
    Ok((model, log))
}
