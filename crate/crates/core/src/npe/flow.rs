use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::nn::{BatchCache, DenseNetwork, DenseNetworkSpec, InitScheme};

/// Affine coupling layer. The first `n_pass` coordinates pass through
/// unchanged and, together with the context, condition a scale and shift
/// for the remaining ones. A fixed permutation is applied afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    n_pass: usize,
    conditioner: DenseNetwork,
    /// `out[i] = y[permutation[i]]`.
    permutation: Vec<usize>,
}

impl CouplingBlock {
    pub fn new(dim: usize, context_dim: usize, conditioner: DenseNetwork, permutation: Vec<usize>) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("coupling blocks need at least two coordinates"));
        }
        let n_pass = dim / 2;
        let n_tr = dim - n_pass;
        if conditioner.input_dim() != n_pass + context_dim || conditioner.output_dim() != 2 * n_tr {
            return Err(mismatch(format!(
                "conditioner maps {} -> {}, block needs {} -> {}",
                conditioner.input_dim(),
                conditioner.output_dim(),
                n_pass + context_dim,
                2 * n_tr
            )));
        }
        let mut seen = vec![false; dim];
        if permutation.len() != dim || !permutation.iter().all(|&p| p < dim && !std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("block permutation is not a permutation of the coordinates"));
        }
        Ok(Self { n_pass, conditioner, permutation })
    }

    pub fn dim(&self) -> usize {
        self.permutation.len()
    }

    pub fn n_pass(&self) -> usize {
        self.n_pass
    }

    pub fn conditioner(&self) -> &DenseNetwork {
        &self.conditioner
    }

    pub fn conditioner_mut(&mut self) -> &mut DenseNetwork {
        &mut self.conditioner
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }
}

pub fn reversal(dim: usize) -> Vec<usize> {
    (0..dim).rev().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub dim: usize,
    pub context_dim: usize,
    pub n_blocks: usize,
    pub conditioner_hidden: Vec<usize>,
    /// Log-scales are squashed as `clamp * tanh(raw / clamp)`.
    pub log_scale_clamp: f64,
}

/// Stack of coupling blocks mapping parameters to base-space noise, given a context vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFlow {
    spec: FlowSpec,
    blocks: Vec<CouplingBlock>,
}

/// Intermediate values of a batched forward pass.
pub struct FlowCache {
    n: usize,
    blocks: Vec<BlockCache>,
    z: Vec<f64>,
    log_det: Vec<f64>,
}

struct BlockCache {
    /// Block input before coupling, `n x dim`.
    x: Vec<f64>,
    cond: BatchCache,
    log_scale: Vec<f64>,
}

impl FlowCache {
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn log_det(&self) -> &[f64] {
        &self.log_det
    }
}

impl ConditionalFlow {
    /// Fresh flow with He-initialized conditioners whose output layers are
    /// zero, so it starts as the identity map.
    pub fn init<R: Rng + ?Sized>(spec: FlowSpec, rng: &mut R) -> Result<Self> {
        if !(spec.log_scale_clamp > 0.0) {
            return Err(invalid("log-scale clamp must be positive"));
        }
        let n_pass = spec.dim / 2;
        let cond_spec =
            DenseNetworkSpec::with_identity_output(n_pass + spec.context_dim, spec.conditioner_hidden.clone(), 2 * (spec.dim - n_pass))?;
        let mut blocks = Vec::with_capacity(spec.n_blocks);
        for _ in 0..spec.n_blocks {
            let mut net = DenseNetwork::init(cond_spec.clone(), InitScheme::HeUniform, rng)?;
            net.zero_output_layer();
            blocks.push(CouplingBlock::new(spec.dim, spec.context_dim, net, reversal(spec.dim))?);
        }
        Ok(Self { spec, blocks })
    }

    pub fn from_blocks(spec: FlowSpec, blocks: Vec<CouplingBlock>) -> Result<Self> {
        if blocks.len() != spec.n_blocks {
            return Err(mismatch(format!("{} blocks for a {}-block flow", blocks.len(), spec.n_blocks)));
        }
        for b in &blocks {
            if b.dim() != spec.dim || b.conditioner.input_dim() != b.n_pass + spec.context_dim {
                return Err(mismatch("coupling block does not fit the flow dimensions"));
            }
        }
        Ok(Self { spec, blocks })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn context_dim(&self) -> usize {
        self.spec.context_dim
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CouplingBlock] {
        &mut self.blocks
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.conditioner.n_params()).sum()
    }

    fn squash(&self, raw: f64) -> f64 {
        let c = self.spec.log_scale_clamp;
        c * (raw / c).tanh()
    }

    fn check(&self, rows: usize, x: &[f64], s: &[f64], s_rows: usize) -> Result<()> {
        if x.len() != rows * self.spec.dim || s.len() != s_rows * self.spec.context_dim {
            return Err(mismatch(format!(
                "flow expects {}-dimensional points and {}-dimensional context",
                self.spec.dim, self.spec.context_dim
            )));
        }
        Ok(())
    }

    /// `z = f(x | s)` and `log |det df/dx|` for a single point.
    pub fn forward(&self, x: &[f64], s: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(1, x, s, 1)?;
        let cache = self.forward_train(x, s, 1)?;
        Ok((cache.z, cache.log_det[0]))
    }

    /// Batched forward pass keeping what [`ConditionalFlow::backward`] needs.
    /// `x` and `s` are row-major with `n` rows each.
    pub fn forward_train(&self, x: &[f64], s: &[f64], n: usize) -> Result<FlowCache> {
        self.check(n, x, s, n)?;
        let (dim, ctx) = (self.spec.dim, self.spec.context_dim);
        let mut current = x.to_vec();
        let mut log_det = vec![0.0; n];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let np = block.n_pass;
            let nt = dim - np;
            let mut cond_in = Vec::with_capacity(n * (np + ctx));
            for r in 0..n {
                cond_in.extend_from_slice(&current[r * dim..r * dim + np]);
                cond_in.extend_from_slice(&s[r * ctx..(r + 1) * ctx]);
            }
            let cond = block.conditioner.forward_train(&cond_in, n);
            let out = cond.output();
            let mut log_scale = vec![0.0; n * nt];
            let mut next = vec![0.0; n * dim];
            for r in 0..n {
                let row = &current[r * dim..(r + 1) * dim];
                let mut y = row.to_vec();
                for j in 0..nt {
                    let ls = self.squash(out[r * 2 * nt + j]);
                    let shift = out[r * 2 * nt + nt + j];
                    log_scale[r * nt + j] = ls;
                    log_det[r] += ls;
                    y[np + j] = row[np + j] * ls.exp() + shift;
                }
                for (i, &p) in block.permutation.iter().enumerate() {
                    next[r * dim + i] = y[p];
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite value after coupling block {b}")));
            }
            blocks.push(BlockCache { x: std::mem::replace(&mut current, next), cond, log_scale });
        }
        Ok(FlowCache { n, blocks, z: current, log_det })
    }

    /// Reverse pass. `dz` is dLoss/dz (`n x dim`) and `dlog_det[r]` is
    /// dLoss/dlog_det for row `r`. Conditioner gradients are accumulated into
    /// `param_grad` (blocks in order); dLoss/dx and dLoss/ds are written to
    /// `dx` and accumulated into `ds`.
    pub fn backward(
        &self,
        cache: &FlowCache,
        dz: &[f64],
        dlog_det: &[f64],
        param_grad: &mut [f64],
        dx: Option<&mut [f64]>,
        ds: &mut [f64],
    ) {
        let n = cache.n;
        let (dim, ctx) = (self.spec.dim, self.spec.context_dim);
        let c = self.spec.log_scale_clamp;
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut at = 0;
        for b in &self.blocks {
            offsets.push(at);
            at += b.conditioner.n_params();
        }
        debug_assert_eq!(param_grad.len(), at);
        let mut d_out = dz.to_vec();
        for (b, block) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[b];
            let np = block.n_pass;
            let nt = dim - np;
            let mut dy = vec![0.0; n * dim];
            for r in 0..n {
                for (i, &p) in block.permutation.iter().enumerate() {
                    dy[r * dim + p] = d_out[r * dim + i];
                }
            }
            let mut upstream = vec![0.0; n * 2 * nt];
            let mut d_in = vec![0.0; n * dim];
            for r in 0..n {
                for j in 0..np {
                    d_in[r * dim + j] = dy[r * dim + j];
                }
                for j in 0..nt {
                    let ls = bc.log_scale[r * nt + j];
                    let scale = ls.exp();
                    let g = dy[r * dim + np + j];
                    d_in[r * dim + np + j] = g * scale;
                    let d_ls = g * bc.x[r * dim + np + j] * scale + dlog_det[r];
                    let t = ls / c;
                    upstream[r * 2 * nt + j] = d_ls * (1.0 - t * t);
                    upstream[r * 2 * nt + nt + j] = g;
                }
            }
            let mut d_cond = vec![0.0; n * (np + ctx)];
            let grad = &mut param_grad[offsets[b]..offsets[b] + block.conditioner.n_params()];
            block.conditioner.backward_batch(&bc.cond, &upstream, grad, Some(&mut d_cond));
            for r in 0..n {
                let row = &d_cond[r * (np + ctx)..(r + 1) * (np + ctx)];
                for j in 0..np {
                    d_in[r * dim + j] += row[j];
                }
                for (a, v) in ds[r * ctx..(r + 1) * ctx].iter_mut().zip(&row[np..]) {
                    *a += v;
                }
            }
            d_out = d_in;
        }
        if let Some(dx) = dx {
            dx.copy_from_slice(&d_out);
        }
    }

    /// `x = f^{-1}(z | s)` for a single point.
    pub fn inverse(&self, z: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        self.check(1, z, s, 1)?;
        let x = self.inverse_batch_shared(z, 1, s);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value while inverting the flow".into()));
        }
        Ok(x)
    }

    /// Inverts `n` rows of `z` that all share the context `s`. Non-finite
    /// results are left in place for the caller to reject.
    pub fn inverse_batch_shared(&self, z: &[f64], n: usize, s: &[f64]) -> Vec<f64> {
        let dim = self.spec.dim;
        debug_assert_eq!(z.len(), n * dim);
        debug_assert_eq!(s.len(), self.spec.context_dim);
        let mut current = z.to_vec();
        let mut y = vec![0.0; n * dim];
        let mut head = Vec::new();
        for block in self.blocks.iter().rev() {
            let np = block.n_pass;
            let nt = dim - np;
            for r in 0..n {
                for (i, &p) in block.permutation.iter().enumerate() {
                    y[r * dim + p] = current[r * dim + i];
                }
            }
            head.clear();
            for r in 0..n {
                head.extend_from_slice(&y[r * dim..r * dim + np]);
            }
            let out = block.conditioner.forward_batch_shared_tail(&head, np, n, s);
            for r in 0..n {
                for j in 0..nt {
                    let ls = self.squash(out[r * 2 * nt + j]);
                    let shift = out[r * 2 * nt + nt + j];
                    let v = &mut y[r * dim + np + j];
                    *v = (*v - shift) * (-ls).exp();
                }
            }
            std::mem::swap(&mut current, &mut y);
        }
        current
    }
}
