use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::error::{invalid, mismatch, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
}

/// Activation applied to one output coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// `lo + (hi - lo) * sigmoid(z)`, always strictly inside `(lo, hi)`.
    ShiftedSigmoid { lo: f64, hi: f64 },
}

impl OutputActivation {
    fn apply(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => z,
            Self::ShiftedSigmoid { lo, hi } => (lo + (hi - lo) * sigmoid(z)).clamp(lo.next_up(), hi.next_down()),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::ShiftedSigmoid { lo, hi } => {
                let s = sigmoid(z);
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_dim: usize,
    pub output_activation: Vec<OutputActivation>,
}

impl DenseNetworkSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_activation: Vec<OutputActivation>) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            hidden_activation: HiddenActivation::Relu,
            output_dim: output_activation.len(),
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_identity_output(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Result<Self> {
        Self::new(input_dim, hidden_widths, vec![OutputActivation::Identity; output_dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(invalid("network dimensions must all be at least 1"));
        }
        if self.output_activation.len() != self.output_dim {
            return Err(mismatch(format!(
                "{} output activations for {} outputs",
                self.output_activation.len(),
                self.output_dim
            )));
        }
        for act in &self.output_activation {
            if let OutputActivation::ShiftedSigmoid { lo, hi } = *act {
                if !(lo < hi) {
                    return Err(invalid(format!("shifted sigmoid needs lo < hi, got ({lo}, {hi})")));
                }
            }
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// All weights in one flat buffer: per layer, the `out x in` row-major
/// matrix followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    params: Vec<f64>,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl NetworkWeights {
    pub fn from_flat(spec: &DenseNetworkSpec, params: Vec<f64>) -> Result<Self> {
        let shapes = spec.layer_shapes();
        let expected: usize = shapes.iter().map(|(o, i)| o * i + o).sum();
        if params.len() != expected {
            return Err(mismatch(format!("network needs {expected} weights, got {}", params.len())));
        }
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for (o, i) in &shapes {
            offsets.push(at);
            at += o * i + o;
        }
        Ok(Self { params, shapes, offsets })
    }

    pub fn n_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn shape(&self, layer: usize) -> (usize, usize) {
        self.shapes[layer]
    }

    /// `(weight matrix, bias)` of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (o, i) = self.shapes[layer];
        let start = self.offsets[layer];
        self.params[start..start + o * i + o].split_at(o * i)
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (o, i) = self.shapes[layer];
        let start = self.offsets[layer];
        self.params[start..start + o * i + o].split_at_mut(o * i)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|w| w.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights uniform on `±sqrt(6 / fan_in)`, biases zero.
    HeUniform,
    Zeros,
}

pub fn init_weights<R: Rng + ?Sized>(spec: &DenseNetworkSpec, scheme: InitScheme, rng: &mut R) -> NetworkWeights {
    let mut params = Vec::with_capacity(spec.n_params());
    for (o, i) in spec.layer_shapes() {
        match scheme {
            InitScheme::Zeros => params.extend(std::iter::repeat_n(0.0, o * i)),
            InitScheme::HeUniform => {
                let bound = (6.0 / i as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                params.extend((0..o * i).map(|_| dist.sample(rng)));
            }
        }
        params.extend(std::iter::repeat_n(0.0, o));
    }
    NetworkWeights::from_flat(spec, params).expect("sized from spec")
}

/// Activations retained by a training forward pass.
#[derive(Clone, Debug)]
pub struct BatchCache {
    batch: usize,
    /// Input to each affine layer: the network input, then every hidden activation.
    layer_inputs: Vec<Vec<f64>>,
    pre_output: Vec<f64>,
    output: Vec<f64>,
}

impl BatchCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// A network specification together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    spec: DenseNetworkSpec,
    weights: NetworkWeights,
}

impl DenseNetwork {
    pub fn new(spec: DenseNetworkSpec, weights: NetworkWeights) -> Result<Self> {
        spec.validate()?;
        if weights.shapes != spec.layer_shapes() {
            return Err(mismatch("weight shapes do not match the network specification"));
        }
        Ok(Self { spec, weights })
    }

    pub fn init<R: Rng + ?Sized>(spec: DenseNetworkSpec, scheme: InitScheme, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let weights = init_weights(&spec, scheme, rng);
        Ok(Self { spec, weights })
    }

    pub fn spec(&self) -> &DenseNetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut NetworkWeights {
        &mut self.weights
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Zeroes the final affine layer so the pre-activation output is 0 for every input.
    pub fn zero_output_layer(&mut self) {
        let last = self.weights.n_layers() - 1;
        let (w, b) = self.weights.layer_mut(last);
        w.fill(0.0);
        b.fill(0.0);
    }

    /// Single-example forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_dim {
            return Err(mismatch(format!("network expects {} inputs, got {}", self.spec.input_dim, input.len())));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(invalid("network input contains a non-finite value"));
        }
        Ok(self.forward_batch(input, 1))
    }

    /// Forward pass over `batch` rows without keeping intermediate activations.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), batch * self.spec.input_dim);
        let mut current = input.to_vec();
        for layer in 0..self.weights.n_layers() {
            current = self.affine(layer, &current, batch);
            if layer + 1 < self.weights.n_layers() {
                relu_in_place(&mut current);
            }
        }
        self.activate_output(&mut current);
        current
    }

    /// Forward pass where the trailing input features are identical for every
    /// row. `head` is `batch x head_dim`; `tail` holds the shared remainder.
    /// The tail's first-layer contribution is folded into the bias once.
    pub fn forward_batch_shared_tail(&self, head: &[f64], head_dim: usize, batch: usize, tail: &[f64]) -> Vec<f64> {
        let (o, i) = self.weights.shape(0);
        debug_assert_eq!(head_dim + tail.len(), i);
        debug_assert_eq!(head.len(), batch * head_dim);
        let (w, b) = self.weights.layer(0);
        let bias: Vec<f64> = (0..o)
            .map(|r| b[r] + w[r * i + head_dim..(r + 1) * i].iter().zip(tail).map(|(a, t)| a * t).sum::<f64>())
            .collect();
        let mut current = broadcast_rows(&bias, batch);
        gemm(batch, head_dim, o, 1.0, head, (head_dim, 1), w, (1, i), 1.0, &mut current, (o, 1));
        for layer in 1..self.weights.n_layers() {
            relu_in_place(&mut current);
            current = self.affine(layer, &current, batch);
        }
        self.activate_output(&mut current);
        current
    }

    /// Forward pass keeping what [`DenseNetwork::backward_batch`] needs.
    pub fn forward_train(&self, input: &[f64], batch: usize) -> BatchCache {
        debug_assert_eq!(input.len(), batch * self.spec.input_dim);
        let n_layers = self.weights.n_layers();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        layer_inputs.push(input.to_vec());
        let mut pre_output = Vec::new();
        for layer in 0..n_layers {
            let mut z = self.affine(layer, &layer_inputs[layer], batch);
            if layer + 1 < n_layers {
                relu_in_place(&mut z);
                layer_inputs.push(z);
            } else {
                pre_output = z;
            }
        }
        let mut output = pre_output.clone();
        self.activate_output(&mut output);
        BatchCache { batch, layer_inputs, pre_output, output }
    }

    /// Reverse pass. `upstream` is dLoss/dOutput (`batch x output_dim`).
    /// Parameter gradients are accumulated into `param_grad`; when
    /// `input_grad` is given it receives dLoss/dInput (`batch x input_dim`).
    pub fn backward_batch(&self, cache: &BatchCache, upstream: &[f64], param_grad: &mut [f64], input_grad: Option<&mut [f64]>) {
        let batch = cache.batch;
        let out_dim = self.spec.output_dim;
        debug_assert_eq!(upstream.len(), batch * out_dim);
        debug_assert_eq!(param_grad.len(), self.weights.len());
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&cache.pre_output)
            .enumerate()
            .map(|(idx, (g, &z))| g * self.spec.output_activation[idx % out_dim].derivative(z))
            .collect();
        let n_layers = self.weights.n_layers();
        let mut input_grad = input_grad;
        for layer in (0..n_layers).rev() {
            let (o, i) = self.weights.shape(layer);
            let a = &cache.layer_inputs[layer];
            let start = self.weights.offsets[layer];
            let (gw, gb) = param_grad[start..start + o * i + o].split_at_mut(o * i);
            gemm(o, batch, i, 1.0, &delta, (1, o), a, (i, 1), 1.0, gw, (i, 1));
            for row in delta.chunks_exact(o) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let (w, _) = self.weights.layer(layer);
            if layer > 0 {
                let mut next = vec![0.0; batch * i];
                gemm(batch, o, i, 1.0, &delta, (o, 1), w, (i, 1), 0.0, &mut next, (i, 1));
                for (d, &act) in next.iter_mut().zip(a) {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = next;
            } else if let Some(dx) = input_grad.take() {
                debug_assert_eq!(dx.len(), batch * i);
                gemm(batch, o, i, 1.0, &delta, (o, 1), w, (i, 1), 0.0, dx, (i, 1));
            }
        }
    }

    /// Gradients of `upstream · output` for a single input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        if input.len() != self.spec.input_dim || upstream.len() != self.spec.output_dim {
            return Err(mismatch("backward: input or upstream gradient has the wrong length"));
        }
        let cache = self.forward_train(input, 1);
        let mut params = vec![0.0; self.weights.len()];
        let mut dx = vec![0.0; input.len()];
        self.backward_batch(&cache, upstream, &mut params, Some(&mut dx));
        Ok(Gradients { params, input: dx })
    }

    fn affine(&self, layer: usize, input: &[f64], batch: usize) -> Vec<f64> {
        let (o, i) = self.weights.shape(layer);
        let (w, b) = self.weights.layer(layer);
        if batch == 1 {
            return w.chunks_exact(i).zip(b).map(|(row, bias)| bias + dot(row, input)).collect();
        }
        let mut out = broadcast_rows(b, batch);
        gemm(batch, i, o, 1.0, input, (i, 1), w, (1, i), 1.0, &mut out, (o, 1));
        out
    }

    fn activate_output(&self, values: &mut [f64]) {
        let acts = &self.spec.output_activation;
        if acts.iter().all(|a| *a == OutputActivation::Identity) {
            return;
        }
        for row in values.chunks_exact_mut(acts.len()) {
            for (v, act) in row.iter_mut().zip(acts) {
                *v = act.apply(*v);
            }
        }
    }
}

/// Dot product with independent partial sums, which the compiler vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn broadcast_rows(row: &[f64], batch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() * batch);
    for _ in 0..batch {
        out.extend_from_slice(row);
    }
    out
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use rand_distr::StandardNormal;

    fn random_net(seed: u64, input: usize, hidden: Vec<usize>, acts: Vec<OutputActivation>) -> DenseNetwork {
        let mut rng = rng_from_seed(seed);
        let spec = DenseNetworkSpec::new(input, hidden, acts).unwrap();
        let mut net = DenseNetwork::init(spec, InitScheme::HeUniform, &mut rng).unwrap();
        // non-zero biases so every code path is exercised
        for w in net.weights_mut().as_mut_slice() {
            *w += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        net
    }

    #[test]
    fn shifted_sigmoid_midpoint_and_limits() {
        let act = OutputActivation::ShiftedSigmoid { lo: 1.0, hi: 10.0 };
        assert_eq!(act.apply(0.0), 5.5);
        let top = act.apply(1e3);
        assert!(top < 10.0 && top > 9.999999);
        let bottom = act.apply(-1e3);
        assert!(bottom > 1.0 && bottom < 1.000001);
    }

    #[test]
    fn shifted_sigmoid_stays_inside_open_interval() {
        let act = OutputActivation::ShiftedSigmoid { lo: 1.0, hi: 10.0 };
        let mut rng = rng_from_seed(17);
        for _ in 0..1_000_000 {
            let z: f64 = 30.0 * rng.sample::<f64, _>(StandardNormal);
            let y = act.apply(z);
            assert!(y > 1.0 && y < 10.0, "{z} -> {y}");
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = DenseNetworkSpec::with_identity_output(4, vec![8, 8], 3).unwrap();
        let net = DenseNetwork::init(spec, InitScheme::Zeros, &mut rng_from_seed(0)).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn he_uniform_bounds_and_determinism() {
        let spec = DenseNetworkSpec::with_identity_output(6, vec![16, 4], 2).unwrap();
        let a = init_weights(&spec, InitScheme::HeUniform, &mut rng_from_seed(5));
        let b = init_weights(&spec, InitScheme::HeUniform, &mut rng_from_seed(5));
        assert_eq!(a, b);
        for layer in 0..a.n_layers() {
            let (_, fan_in) = a.shape(layer);
            let bound = (6.0 / fan_in as f64).sqrt();
            let (w, bias) = a.layer(layer);
            assert!(w.iter().all(|x| x.abs() <= bound));
            assert!(bias.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let spec = DenseNetworkSpec::with_identity_output(2, vec![3], 1).unwrap();
        let net = DenseNetwork::init(spec, InitScheme::HeUniform, &mut rng_from_seed(0)).unwrap();
        assert!(net.forward(&[f64::NAN, 0.0]).is_err());
        assert!(net.forward(&[0.0]).is_err());
    }

    #[test]
    fn batch_forward_matches_single_rows() {
        let net = random_net(3, 5, vec![7, 6], vec![OutputActivation::Identity, OutputActivation::ShiftedSigmoid { lo: -1.0, hi: 2.0 }]);
        let mut rng = rng_from_seed(4);
        let batch = 9;
        let x: Vec<f64> = (0..batch * 5).map(|_| rng.sample(StandardNormal)).collect();
        let y = net.forward_batch(&x, batch);
        let cached = net.forward_train(&x, batch);
        assert_eq!(cached.output(), &y[..]);
        for r in 0..batch {
            let single = net.forward(&x[r * 5..(r + 1) * 5]).unwrap();
            for (a, b) in single.iter().zip(&y[r * 2..(r + 1) * 2]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_tail_forward_matches_full_input() {
        let net = random_net(8, 6, vec![10, 5], vec![OutputActivation::Identity; 3]);
        let mut rng = rng_from_seed(1);
        let batch = 4;
        let tail: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let head: Vec<f64> = (0..batch * 2).map(|_| rng.sample(StandardNormal)).collect();
        let mut full = Vec::new();
        for r in 0..batch {
            full.extend_from_slice(&head[r * 2..r * 2 + 2]);
            full.extend_from_slice(&tail);
        }
        let a = net.forward_batch(&full, batch);
        let b = net.forward_batch_shared_tail(&head, 2, batch, &tail);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let mut rng = rng_from_seed(1000 + seed);
            let input = 2 + (seed % 4) as usize;
            let hidden = vec![3 + (seed % 3) as usize, 2 + (seed % 5) as usize];
            let acts = vec![
                OutputActivation::Identity,
                OutputActivation::ShiftedSigmoid { lo: 1.0, hi: 10.0 },
                OutputActivation::ShiftedSigmoid { lo: -0.5, hi: 0.5 },
            ];
            let net = random_net(seed, input, hidden, acts);
            let x: Vec<f64> = (0..input).map(|_| rng.sample(StandardNormal)).collect();
            let up: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let grads = net.backward(&x, &up).unwrap();
            let objective = |n: &DenseNetwork, x: &[f64]| -> f64 {
                n.forward(x).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum()
            };
            let h = 1e-5;
            for p in 0..net.n_params() {
                let mut plus = net.clone();
                plus.weights_mut().as_mut_slice()[p] += h;
                let mut minus = net.clone();
                minus.weights_mut().as_mut_slice()[p] -= h;
                let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
                worst = worst.max(rel_err(fd, grads.params[p]));
            }
            for j in 0..input {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
                worst = worst.max(rel_err(fd, grads.input[j]));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = random_net(2, 3, vec![4], vec![OutputActivation::Identity; 2]);
        let g = net.backward(&[0.3, -0.2, 1.0], &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_outer_product() {
        let spec = DenseNetworkSpec::with_identity_output(3, vec![], 2).unwrap();
        let net = DenseNetwork::init(spec, InitScheme::HeUniform, &mut rng_from_seed(9)).unwrap();
        let x = [0.5, -1.0, 2.0];
        let up = [3.0, -0.5];
        let g = net.backward(&x, &up).unwrap();
        let expected_w: Vec<f64> = up.iter().flat_map(|u| x.iter().map(move |xi| u * xi)).collect();
        assert_eq!(&g.params[..6], &expected_w[..]);
        assert_eq!(&g.params[6..], &up[..]);
    }
}
