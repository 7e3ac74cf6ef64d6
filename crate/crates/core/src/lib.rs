//! Accelerated soft Bayesian additive regression trees.
//!
//! Candidate trees are grown from the root by marginal-likelihood weighted
//! split sampling, smoothed with a per-tree gating bandwidth chosen by grid
//! search, and accepted or rejected against the incumbent tree with a
//! Metropolis-Hastings step inside a Bayesian backfitting loop.
//!
//! The crate is organised bottom-up:
//!
//! * [`tree`]: tree/forest representation, gating functions and leaf
//!   probabilities.
//! * [`likelihood`]: hard and soft marginal likelihoods plus the conjugate
//!   draws for leaf values and the noise variance.
//! * [`grow`]: grow-from-root sampling of hard candidate trees.
//! * [`sampler`]: bandwidth search, MH selection and the full fitting loop.
//! * [`data`], [`friedman`], [`model_io`]: ingestion, synthetic data and
//!   model persistence.
//! * [`bench`]: the Friedman benchmark harness used by the CLI.

pub mod bench;
pub mod data;
mod error;
pub mod friedman;
pub mod grow;
pub mod likelihood;
pub mod linalg;
pub mod model_io;
pub mod sampler;
pub mod tree;

pub use error::{Error, Result};
pub use sampler::{fit, Aggregation, FitConfig, FittedModel, Prediction};
pub use tree::{DecisionTree, Forest, GateFamily};
