//! Sparse Laplacian estimation for Laplacian-constrained Gaussian Markov
//! random fields: a projected Newton solver with an MCP penalty, a proximal
//! gradient baseline, synthetic data generation and recovery metrics.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod inner;
pub mod io;
pub mod laplacian;
pub mod metrics;
pub mod newgle;
pub mod objective;
pub mod pgd;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
