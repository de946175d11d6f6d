//! Distances between the conditional distributions of softmax models
//! `p(y|x) ∝ exp(f(x)ᵀg(y))` and dissimilarities between their representations.
//!
//! The crate works on finite tables: a model is its embedding matrix over a
//! fixed input grid and its unembedding matrix over a fixed label set.
//!
//! - [`model_core`]: model tables, conditional log-probabilities, pivots,
//!   displaced representations and the projection matrices `L` and `N`.
//! - [`metrics_distributional`]: `d_KL`, the ψ scale terms, the log-likelihood
//!   variance distance and pivot selection.
//! - [`metrics_representational`]: standardization, cross-covariance, the
//!   deflation PLS-SVD, `m_SVD`/`d_SVD`, CCA and affine-fit residuals.
//! - [`constructions`]: model pairs whose KL divergence vanishes while their
//!   representations stay unrelated, plus noise perturbations.
//! - [`bound_lab`]: error-term decompositions and the `d_SVD ≤ 2Mε` certificate.
//! - [`synth_train`]: angular-slice data, a small MLP trained with Adam, and
//!   the width sweep.
//! - [`io`] and [`cli`]: JSON/CSV formats and the command-line front end.

// `!(x > y)` is the NaN-rejecting comparison throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound_lab;
pub mod cli;
pub mod constructions;
pub mod error;
pub mod io;
pub mod metrics_distributional;
pub mod metrics_representational;
pub mod model_core;
pub mod moments;
pub mod synth_train;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
