//! Sparse auto-encoder classifier for fuel-cell high-frequency-resistance
//! (HFR) health classes, plus a bit-exact fixed-point inference engine that
//! acts as the golden model for a streaming hardware deployment.
//!
//! Pipeline: [`dataset`] (CSV, labels, standardization, split, synthetic
//! data) → [`trainer`] (mini-batch Adam on MSE plus the [`sparsity`] KL
//! penalty, built on [`nn`]) → [`metrics`] → [`quant`] (Q-format model and
//! frame-level inference). [`model_io`] holds the text file formats and
//! [`cli`] the command-line front end.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod matrix;
pub mod metrics;
pub mod model_io;
pub mod nn;
pub mod quant;
pub mod sparsity;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
pub use matrix::Matrix;
