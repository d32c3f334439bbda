//! Mortality prediction on multivariate clinical time series with a
//! 1-D convolutional network and a heteroscedastic aleatoric-uncertainty
//! head (Gaussian logit corruption, Monte Carlo cross-entropy).
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`rng`]: dense float64 arrays and the seeded,
//!   platform-stable random stream everything else draws from.
//! - [`layers`]: forward/backward passes of the five-layer benchmark
//!   network (two 1-D conv layers, dropout/pooling/normalization, dense
//!   output).
//! - [`bayes`]: the uncertainty head — per-instance noise scale, Monte
//!   Carlo logit corruption, and the attenuated cross-entropy loss.
//! - [`train`]: Adam optimization, early stopping on validation AUC,
//!   ensembles, and binary checkpoints.
//! - [`data`]: hourly binning, imputation and masks, missingness
//!   injection, and a seeded synthetic-EHR generator.
//! - [`eval`]: ROC/AUC plus the cohort analyses (median-uncertainty
//!   split, retention sweep, uncertainty×probability grid).
//! - [`config`] / [`cli`] / [`report`]: the command-line workflow.

pub mod bayes;
pub mod cli;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::Tensor;
