//! Prediction-focused mixture models.
//!
//! Gaussian mixtures and hidden Markov models whose input dimensions each
//! carry a relevance switch, trained by variational EM so that a small
//! component budget is spent on the dimensions that predict the target.
//! Also included: supervised, two-step and logistic-regression baselines,
//! the synthetic generators used to study these models, exact enumeration
//! oracles for small problems, and evaluation metrics.

pub mod baselines;
pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod hmm;
pub mod rng;
pub mod stats;
pub mod tune;

/// Library version, recorded in model files and reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{Dataset, GroundTruth, Sequence, SequenceDataset};
pub use error::{Error, Result};
pub use gmm::{EmConfig, FitResult, GmmParams, Responsibilities, SwitchPosterior};
pub use hmm::{HmmParams, StatePosteriors};
pub use rng::SeededRng;
pub use stats::{LogProb, Simplex};
