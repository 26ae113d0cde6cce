//! Priors, the joint posterior and its sampler.

pub mod convergence;
pub mod model;
pub mod sampler;
pub mod summary;
pub mod transform;

pub use convergence::{gelman_rubin, mcse, RHAT_THRESHOLD};
pub use model::{fit, EvidenceModel, FitOutput, ModelConfig, PriorSpec};
pub use sampler::{mcmc_step, run, BlockScheme, ChainState, LogDensity, RunOutput, SamplerConfig};
pub use summary::{PosteriorSummary, QuantitySummary};
