//! Dense multilayer perceptrons with exact reverse-mode gradients, ADAM and
//! a binary checkpoint format. Batches are row-major `batch x features`
//! buffers; all arithmetic is `f64`.

mod adam;
mod checkpoint;
mod dense;
mod gemm;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{deserialize, serialize, CheckpointMetadata, LossKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{
    init_weights, BatchCache, DenseNetwork, DenseNetworkSpec, Gradients, HiddenActivation, InitScheme, NetworkWeights,
    OutputActivation,
};
