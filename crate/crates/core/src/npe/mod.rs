//! Neural posterior estimation: a summary encoder feeding a conditional
//! affine-coupling flow, trained on simulated pairs.

mod flow;
mod model;
mod ppc;
mod train;

pub use flow::{reversal, ConditionalFlow, CouplingBlock, FlowCache, FlowSpec};
pub use model::{log_std_normal, NpeArchitecture, NpeModel, ParamTransform, SampleOutcome, BUNDLE_FILE};
pub use ppc::{posterior_predictive, summarize as summarize_replicates, CellCheck, Histogram, PosteriorPredictive, PpcReport};
pub use train::{train_npe, NETWORK_NAME};
