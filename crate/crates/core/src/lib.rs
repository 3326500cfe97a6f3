//! Multiple systems estimation (MSE) with interval-censored counts.
//!
//! The crate bundles the log-linear Poisson capture–recapture model, a small
//! dense-network substrate, amortized neural estimators (quantile networks and
//! a conditional affine-coupling flow), likelihood-based baselines (MLE and
//! adaptive Metropolis) and the simulation-study harness that compares them.
//!
//! ```
//! use mse_core::model::{CensorInterval, ModelParams, PriorSpec, Dataset};
//! use mse_core::rng_from_seed;
//!
//! let mut rng = rng_from_seed(7);
//! let theta = ModelParams::new(3, 4.0, vec![0.5, -0.2, 0.1], vec![0.0; 3]).unwrap();
//! let counts = mse_core::model::simulate_counts(&theta, &mut rng).unwrap();
//! let data = Dataset::censored(3, &counts, Some(CensorInterval::new(0, 10).unwrap())).unwrap();
//! let ll = mse_core::model::log_likelihood(&data, &theta).unwrap();
//! assert!(ll.is_finite());
//! # let _ = PriorSpec::default();
//! ```

// `!(a < b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod error;
pub mod io;
pub mod eval;
pub mod model;
pub mod nbe;
pub mod nn;
pub mod npe;
pub mod samples;
pub mod train;

pub use error::{Error, Result};

/// The RNG used everywhere a seed must reproduce a run bit-for-bit.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (chain, block, dataset) from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
