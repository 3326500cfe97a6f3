use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::flow::{ConditionalFlow, CouplingBlock, FlowSpec};
use crate::error::{invalid, mismatch, Error, Result};
use crate::io::write_atomic;
use crate::model::{n_params, CensorInterval, Dataset, ModelParams, PriorSpec};
use crate::nn::{deserialize, serialize, CheckpointMetadata, DenseNetwork, DenseNetworkSpec, InitScheme, LossKind};
use crate::samples::PosteriorSamples;
use crate::train::{check_compatible, input_dim, minibatches, InputScaling};
use crate::{derive_seed, rng_from_seed};

pub const BUNDLE_FILE: &str = "bundle.json";
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Proposal batch size when sampling; each batch has its own RNG stream.
const SAMPLE_CHUNK: usize = 1024;
const STARVATION_BUDGET: usize = 1_000_000;
const STARVATION_RATE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpeArchitecture {
    pub encoder_hidden: Vec<usize>,
    pub summary_dim: usize,
    pub n_blocks: usize,
    pub conditioner_hidden: Vec<usize>,
    pub log_scale_clamp: f64,
    /// Standardize parameters with the prior mean and sd before the flow.
    pub standardize: bool,
    /// Map alpha from its prior interval to the real line before the flow.
    pub logit_alpha: bool,
    /// Standardize each input feature with statistics of the validation set.
    pub scale_inputs: bool,
}

impl Default for NpeArchitecture {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![256; 3],
            summary_dim: 128,
            n_blocks: 5,
            conditioner_hidden: vec![128, 128],
            log_scale_clamp: 6.0,
            standardize: true,
            logit_alpha: true,
            scale_inputs: true,
        }
    }
}

/// Fixed bijection applied to the parameters before the flow: optionally a
/// logit map of alpha from its prior interval onto the real line, then
/// `u = (x - loc) / scale` per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTransform {
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
    #[serde(default)]
    pub alpha_bounds: Option<[f64; 2]>,
}

impl ParamTransform {
    pub fn identity(dim: usize) -> Self {
        Self { loc: vec![0.0; dim], scale: vec![1.0; dim], alpha_bounds: None }
    }

    /// Prior-based transform. With `logit_alpha` the bounded intercept is
    /// mapped to the real line, where its uniform prior becomes standard logistic.
    pub fn from_prior(prior: &PriorSpec, k: usize, logit_alpha: bool) -> Self {
        let (mut loc, mut scale) = prior.moments(k);
        let mut alpha_bounds = None;
        if logit_alpha {
            loc[0] = 0.0;
            scale[0] = std::f64::consts::PI / 3f64.sqrt();
            alpha_bounds = Some([prior.alpha_lo, prior.alpha_hi]);
        }
        Self { loc, scale, alpha_bounds }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.loc.len() != dim || self.scale.len() != dim {
            return Err(mismatch("parameter transform length differs from the parameter dimension"));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.loc.iter().any(|l| !l.is_finite()) {
            return Err(invalid("parameter transform needs finite locations and positive scales"));
        }
        if let Some([lo, hi]) = self.alpha_bounds {
            if !(lo < hi) {
                return Err(invalid("alpha bounds are not an interval"));
            }
        }
        Ok(())
    }

    /// Writes `u` and returns `log |det du/dtheta|`; `-inf` when alpha lies
    /// outside its bounds.
    pub fn forward_into(&self, theta: &[f64], out: &mut [f64]) -> f64 {
        let mut log_det = 0.0;
        for (i, (((o, &t), l), s)) in out.iter_mut().zip(theta).zip(&self.loc).zip(&self.scale).enumerate() {
            let x = match (i, self.alpha_bounds) {
                (0, Some([lo, hi])) => {
                    let w = hi - lo;
                    let f = (t - lo) / w;
                    if !(f > 0.0 && f < 1.0) {
                        *o = if f <= 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
                        return f64::NEG_INFINITY;
                    }
                    log_det -= w.ln() + f.ln() + (-f).ln_1p();
                    f.ln() - (-f).ln_1p()
                }
                _ => t,
            };
            *o = (x - l) / s;
            log_det -= s.ln();
        }
        log_det
    }

    pub fn inverse_in_place(&self, u: &mut [f64]) {
        for ((v, l), s) in u.iter_mut().zip(&self.loc).zip(&self.scale) {
            *v = *v * s + l;
        }
        if let Some([lo, hi]) = self.alpha_bounds {
            let y = u[0];
            let f = if y >= 0.0 { 1.0 / (1.0 + (-y).exp()) } else { y.exp() / (1.0 + y.exp()) };
            u[0] = lo + (hi - lo) * f;
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub samples: PosteriorSamples,
    pub acceptance_rate: f64,
    pub proposals: usize,
}

/// Summary encoder plus conditional normalizing flow over the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NpeModel {
    k: usize,
    prior: PriorSpec,
    interval: Option<CensorInterval>,
    training_seed: u64,
    architecture: NpeArchitecture,
    input_scaling: InputScaling,
    encoder: DenseNetwork,
    transform: ParamTransform,
    flow: ConditionalFlow,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    kind: String,
    k: usize,
    prior: PriorSpec,
    censor_interval: Option<CensorInterval>,
    training_seed: u64,
    architecture: NpeArchitecture,
    transform: ParamTransform,
    input_scaling: InputScaling,
    base_dim: usize,
    flow: FlowSpec,
    permutations: Vec<Vec<usize>>,
    encoder: String,
    blocks: Vec<String>,
}

impl NpeModel {
    /// Untrained model: He-initialized encoder and an identity flow.
    pub fn init<R: Rng + ?Sized>(
        k: usize,
        prior: PriorSpec,
        interval: Option<CensorInterval>,
        architecture: NpeArchitecture,
        training_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        prior.validate()?;
        if architecture.n_blocks == 0 {
            return Err(invalid("the flow needs at least one coupling block"));
        }
        let p = n_params(k);
        let enc_spec = DenseNetworkSpec::with_identity_output(input_dim(k), architecture.encoder_hidden.clone(), architecture.summary_dim)?;
        let encoder = DenseNetwork::init(enc_spec, InitScheme::HeUniform, rng)?;
        let flow = ConditionalFlow::init(
            FlowSpec {
                dim: p,
                context_dim: architecture.summary_dim,
                n_blocks: architecture.n_blocks,
                conditioner_hidden: architecture.conditioner_hidden.clone(),
                log_scale_clamp: architecture.log_scale_clamp,
            },
            rng,
        )?;
        let transform = if architecture.standardize {
            ParamTransform::from_prior(&prior, k, architecture.logit_alpha)
        } else {
            ParamTransform::identity(p)
        };
        let input_scaling = InputScaling::identity(input_dim(k));
        Ok(Self { k, prior, interval, training_seed, architecture, input_scaling, encoder, transform, flow })
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

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    pub fn architecture(&self) -> &NpeArchitecture {
        &self.architecture
    }

    pub fn input_scaling(&self) -> &InputScaling {
        &self.input_scaling
    }

    pub fn set_input_scaling(&mut self, scaling: InputScaling) -> Result<()> {
        scaling.validate(input_dim(self.k))?;
        self.input_scaling = scaling;
        Ok(())
    }

    /// Network input rows after the fixed feature scaling.
    pub fn scale_inputs(&self, inputs: &[f64]) -> Vec<f64> {
        let mut x = inputs.to_vec();
        self.input_scaling.apply(&mut x);
        x
    }

    pub fn encoder(&self) -> &DenseNetwork {
        &self.encoder
    }

    pub fn flow(&self) -> &ConditionalFlow {
        &self.flow
    }

    pub fn flow_mut(&mut self) -> &mut ConditionalFlow {
        &mut self.flow
    }

    pub fn transform(&self) -> &ParamTransform {
        &self.transform
    }

    pub fn dim(&self) -> usize {
        n_params(self.k)
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.flow.n_params()
    }

    /// All trainable weights: encoder first, then each conditioner in block order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = self.encoder.weights().as_slice().to_vec();
        for b in self.flow.blocks() {
            out.extend_from_slice(b.conditioner().weights().as_slice());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(mismatch(format!("model has {} weights, got {}", self.n_params(), params.len())));
        }
        let (enc, mut rest) = params.split_at(self.encoder.n_params());
        self.encoder.weights_mut().as_mut_slice().copy_from_slice(enc);
        for b in self.flow.blocks_mut() {
            let w = b.conditioner_mut().weights_mut().as_mut_slice();
            let (head, tail) = rest.split_at(w.len());
            w.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Summary vector `s` of a dataset.
    pub fn summary(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_compatible(self.k, self.interval, data)?;
        self.encoder.forward(&self.scale_inputs(&data.network_input()))
    }

    /// Maps parameters to base space given a summary. The log-determinant
    /// includes the standardization.
    pub fn flow_forward(&self, theta: &ModelParams, s: &[f64]) -> Result<(Vec<f64>, f64)> {
        if theta.k() != self.k {
            return Err(mismatch(format!("parameters for K={} given to a K={} model", theta.k(), self.k)));
        }
        let mut u = vec![0.0; self.dim()];
        let t_ld = self.transform.forward_into(&theta.to_vec(), &mut u);
        if !t_ld.is_finite() {
            return Err(invalid(format!("alpha = {} lies outside the prior support", theta.alpha)));
        }
        let (z, ld) = self.flow.forward(&u, s)?;
        Ok((z, ld + t_ld))
    }

    pub fn flow_inverse(&self, z: &[f64], s: &[f64]) -> Result<ModelParams> {
        let mut u = self.flow.inverse(z, s)?;
        self.transform.inverse_in_place(&mut u);
        ModelParams::from_slice(self.k, &u)
    }

    /// `log q(theta | s)`; `-inf` when alpha is outside the prior support.
    pub fn log_q_with_summary(&self, theta: &ModelParams, s: &[f64]) -> Result<f64> {
        if !self.prior.alpha_in_support(theta.alpha) || (self.transform.alpha_bounds.is_some() && !self.alpha_strictly_inside(theta.alpha)) {
            return Ok(f64::NEG_INFINITY);
        }
        let (z, ld) = self.flow_forward(theta, s)?;
        Ok(log_std_normal(&z) + ld)
    }

    /// Approximate posterior log density `log q(theta | data)`.
    pub fn log_q(&self, theta: &ModelParams, data: &Dataset) -> Result<f64> {
        let s = self.summary(data)?;
        self.log_q_with_summary(theta, &s)
    }

    fn alpha_strictly_inside(&self, alpha: f64) -> bool {
        alpha > self.prior.alpha_lo && alpha < self.prior.alpha_hi
    }

    fn transform_rows(&self, thetas: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.dim();
        let mut u = vec![0.0; n * p];
        let mut log_det = Vec::with_capacity(n);
        for (src, dst) in thetas.chunks_exact(p).zip(u.chunks_exact_mut(p)) {
            let ld = self.transform.forward_into(src, dst);
            if !ld.is_finite() {
                return Err(invalid(format!("training parameter alpha = {} lies outside the prior support", src[0])));
            }
            log_det.push(ld);
        }
        Ok((u, log_det))
    }

    /// Mean negative log density of `n` training pairs and its gradient with
    /// respect to [`NpeModel::params`].
    pub fn nll_and_gradient(&self, inputs: &[f64], thetas: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
        let (d, p, ctx) = (input_dim(self.k), self.dim(), self.architecture.summary_dim);
        if inputs.len() != n * d || thetas.len() != n * p {
            return Err(mismatch("training batch does not match the model dimensions"));
        }
        let enc_cache = self.encoder.forward_train(&self.scale_inputs(inputs), n);
        let (u, t_ld) = self.transform_rows(thetas, n)?;
        let flow_cache = self.flow.forward_train(&u, enc_cache.output(), n)?;
        let nll = batch_nll(flow_cache.z(), flow_cache.log_det(), &t_ld, p);
        let inv_n = 1.0 / n as f64;
        let dz: Vec<f64> = flow_cache.z().iter().map(|z| z * inv_n).collect();
        let dld = vec![-inv_n; n];
        let mut grad = vec![0.0; self.n_params()];
        let (g_enc, g_flow) = grad.split_at_mut(self.encoder.n_params());
        let mut ds = vec![0.0; n * ctx];
        self.flow.backward(&flow_cache, &dz, &dld, g_flow, None, &mut ds);
        self.encoder.backward_batch(&enc_cache, &ds, g_enc, None);
        Ok((nll * inv_n, grad))
    }

    /// Mean negative log density over a batch, evaluated in chunks.
    pub fn mean_nll(&self, inputs: &[f64], thetas: &[f64], n: usize) -> Result<f64> {
        let (d, p) = (input_dim(self.k), self.dim());
        let mut total = 0.0;
        for (s, e) in minibatches(n, 1024) {
            let rows = e - s;
            let summaries = self.encoder.forward_batch(&self.scale_inputs(&inputs[s * d..e * d]), rows);
            let (u, t_ld) = self.transform_rows(&thetas[s * p..e * p], rows)?;
            let cache = self.flow.forward_train(&u, &summaries, rows)?;
            total += batch_nll(cache.z(), cache.log_det(), &t_ld, p);
        }
        Ok(total / n as f64)
    }

    /// Draws `n_samples` parameters from `q(theta | data)`, rejecting draws
    /// outside the prior's alpha support.
    pub fn sample_posterior(&self, data: &Dataset, n_samples: usize, seed: u64) -> Result<SampleOutcome> {
        let s = self.summary(data)?;
        self.sample_with_summary(&s, n_samples, seed)
    }

    pub fn sample_with_summary(&self, s: &[f64], n_samples: usize, seed: u64) -> Result<SampleOutcome> {
        if n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        if s.len() != self.architecture.summary_dim {
            return Err(mismatch("summary vector has the wrong length"));
        }
        let p = self.dim();
        let mut accepted: Vec<f64> = Vec::with_capacity(n_samples * p);
        let mut proposals = 0usize;
        let mut next_chunk = 0u64;
        while accepted.len() < n_samples * p {
            let have = accepted.len() / p;
            let rate = if proposals == 0 { 1.0 } else { (have as f64 / proposals as f64).max(STARVATION_RATE) };
            let want = ((n_samples - have) as f64 / rate * 1.05).ceil() as usize;
            let n_chunks = want.div_ceil(SAMPLE_CHUNK).clamp(1, 64) as u64;
            let chunks = (next_chunk..next_chunk + n_chunks).collect::<Vec<_>>();
            next_chunk += n_chunks;
            for rows in map_chunks(&chunks, |c| self.propose_chunk(s, derive_seed(seed, c))) {
                accepted.extend(rows);
            }
            proposals += n_chunks as usize * SAMPLE_CHUNK;
            let rate = (accepted.len() / p) as f64 / proposals as f64;
            if proposals >= STARVATION_BUDGET && rate < STARVATION_RATE {
                return Err(Error::SupportStarvation { rate, proposals });
            }
        }
        let total_accepted = accepted.len() / p;
        accepted.truncate(n_samples * p);
        Ok(SampleOutcome {
            samples: PosteriorSamples::new(self.k, accepted)?,
            acceptance_rate: total_accepted as f64 / proposals as f64,
            proposals,
        })
    }

    fn propose_chunk(&self, s: &[f64], seed: u64) -> Vec<f64> {
        let p = self.dim();
        let mut rng = rng_from_seed(seed);
        let z: Vec<f64> = (0..SAMPLE_CHUNK * p).map(|_| rng.sample(StandardNormal)).collect();
        let mut theta = self.flow.inverse_batch_shared(&z, SAMPLE_CHUNK, s);
        let mut kept = Vec::with_capacity(theta.len());
        for row in theta.chunks_exact_mut(p) {
            self.transform.inverse_in_place(row);
            if row.iter().all(|v| v.is_finite()) && self.prior.alpha_in_support(row[0]) {
                kept.extend_from_slice(row);
            }
        }
        kept
    }

    fn metadata(&self, role: &str) -> CheckpointMetadata {
        CheckpointMetadata {
            k: self.k,
            prior: self.prior,
            censor_interval: self.interval,
            training_seed: self.training_seed,
            loss: LossKind::NegLogLikelihood,
            role: role.into(),
        }
    }

    /// Writes the encoder, one checkpoint per coupling block and `bundle.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("encoder.msenn"), &serialize(&self.encoder, &self.metadata("npe_encoder"))?)?;
        let mut blocks = Vec::new();
        for (i, b) in self.flow.blocks().iter().enumerate() {
            let file = format!("block_{i}.msenn");
            write_atomic(&dir.join(&file), &serialize(b.conditioner(), &self.metadata("npe_conditioner"))?)?;
            blocks.push(file);
        }
        let header = BundleHeader {
            kind: "npe".into(),
            k: self.k,
            prior: self.prior,
            censor_interval: self.interval,
            training_seed: self.training_seed,
            architecture: self.architecture.clone(),
            transform: self.transform.clone(),
            input_scaling: self.input_scaling.clone(),
            base_dim: self.dim(),
            flow: self.flow.spec().clone(),
            permutations: self.flow.blocks().iter().map(|b| b.permutation().to_vec()).collect(),
            encoder: "encoder.msenn".into(),
            blocks,
        };
        write_atomic(&dir.join(BUNDLE_FILE), serde_json::to_string_pretty(&header)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: BundleHeader = serde_json::from_slice(&fs::read(dir.join(BUNDLE_FILE))?)
            .map_err(|e| Error::Format(format!("{BUNDLE_FILE}: {e}")))?;
        if header.kind != "npe" {
            return Err(Error::Format(format!("bundle holds a '{}' model, not an NPE", header.kind)));
        }
        let p = n_params(header.k);
        if header.base_dim != p || header.flow.dim != p || header.permutations.len() != header.blocks.len() {
            return Err(Error::Format("bundle dimensions are inconsistent".into()));
        }
        header.transform.validate(p).map_err(|e| Error::Format(e.to_string()))?;
        header.input_scaling.validate(input_dim(header.k)).map_err(|e| Error::Format(e.to_string()))?;
        let load_net = |file: &str| -> Result<DenseNetwork> {
            let (net, meta) = deserialize(&fs::read(dir.join(file))?)?;
            if meta.k != header.k || meta.censor_interval != header.censor_interval {
                return Err(Error::Format(format!("checkpoint {file} disagrees with {BUNDLE_FILE}")));
            }
            Ok(net)
        };
        let encoder = load_net(&header.encoder)?;
        if encoder.input_dim() != input_dim(header.k) || encoder.output_dim() != header.flow.context_dim {
            return Err(Error::Format("encoder shape does not match the bundle".into()));
        }
        let mut blocks = Vec::new();
        for (file, perm) in header.blocks.iter().zip(header.permutations) {
            let block = CouplingBlock::new(p, header.flow.context_dim, load_net(file)?, perm)
                .map_err(|e| Error::Format(format!("{file}: {e}")))?;
            blocks.push(block);
        }
        let flow = ConditionalFlow::from_blocks(header.flow, blocks).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            k: header.k,
            prior: header.prior,
            interval: header.censor_interval,
            training_seed: header.training_seed,
            architecture: header.architecture,
            input_scaling: header.input_scaling,
            encoder,
            transform: header.transform,
            flow,
        })
    }

}

pub fn log_std_normal(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - z.len() as f64 * HALF_LN_2PI
}

/// Sum over rows of `-log q`.
fn batch_nll(z: &[f64], log_det: &[f64], transform_log_det: &[f64], p: usize) -> f64 {
    z.chunks_exact(p)
        .zip(log_det)
        .zip(transform_log_det)
        .map(|((row, ld), t)| -(log_std_normal(row) + ld + t))
        .sum()
}

#[cfg(feature = "parallel")]
fn map_chunks<T: Send>(chunks: &[u64], f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    chunks.par_iter().map(|&c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<T>(chunks: &[u64], f: impl Fn(u64) -> T) -> Vec<T> {
    chunks.iter().map(|&c| f(c)).collect()
}
