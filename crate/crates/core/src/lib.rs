//! Learned low-rank plus sparse decomposition of positive semidefinite
//! matrices.
//!
//! A small feedforward network maps the lower triangle of a symmetric matrix
//! `M` to a factor `U`, and the decomposition is `L = U U^T`, `S = M - L`.
//! `L` is positive semidefinite with rank at most `k` for every input, by
//! construction. The crate also ships the classical robust PCA solvers
//! (PCP, IALM, FPCP), a seeded synthetic data generator, the evaluation
//! metrics, and a harness for end-to-end comparisons.

pub mod error;
pub mod datagen;
pub mod linalg;
pub mod model;
pub mod train;
pub mod baselines;
pub mod metrics;
pub mod harness;

pub use error::{DeniseError, Result};
