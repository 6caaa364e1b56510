//! Domain-adaptation feature learning by second-moment matching.
//!
//! The crate learns linear feature transforms that shrink the gap between
//! the uncentered second moments of a source domain and a target domain,
//! so that a linear classifier trained on transformed source samples
//! generalizes to the target. One layer solves a regularized linear
//! regression of the data onto itself with a moment-gap penalty; stacking
//! layers gives a deep linear model (FLAMM). With the gap penalty switched
//! off the layer degenerates to plain ridge-style self-regression (SFL).
//!
//! Alongside the stack solver the crate ships:
//!
//! - [`moments`]: second-moment and moment-gap computation plus small
//!   spectral utilities,
//! - [`baselines`]: PCA and CORAL (whiten source, recolor with the target
//!   covariance) reference methods,
//! - [`classifier`]: a deterministic L2-regularized linear SVM used to
//!   evaluate every representation,
//! - [`data`]: tokenization, vocabulary building, tf-idf, sparse matrix
//!   file IO and split management,
//! - [`experiment`]: end-to-end orchestration with small-validation-set
//!   (STV) hyperparameter selection and reproducible reports.

pub mod baselines;
pub mod classifier;
pub mod data;
pub mod error;
pub mod experiment;
pub mod flamm;
pub mod moments;

mod bin_io;

pub use error::{Error, Result};
