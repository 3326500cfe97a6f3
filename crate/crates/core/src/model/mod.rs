//! The generative log-linear Poisson model for list-overlap counts.
//!
//! Cells are indexed by non-empty capture patterns; each count is an
//! independent Poisson draw whose log-rate is an intercept plus main list
//! effects plus pairwise interactions. Counts inside a disclosure-control
//! interval are replaced by a sentinel and flagged in a mask.

mod dataset;
mod likelihood;
mod params;
mod patterns;
pub mod poisson;
mod simulate;

pub use dataset::{apply_censoring, CensorInterval, Dataset, DatasetCell, DatasetFile, CENSORED};
pub use likelihood::{log_likelihood, CensoredPoissonLikelihood};
pub use params::{hidden_population, log_prior, log_rate, ModelParams, PriorSpec};
pub use patterns::{enumerate_patterns, n_cells, n_pairs, n_params, pair_index, CapturePattern, Design, MAX_LISTS};
pub use simulate::{draw_pair, simulate_counts, SimulatedPair, MAX_RATE};
