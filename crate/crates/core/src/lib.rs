//! Tamed theta schemes for neutral stochastic differential delay equations
//!
//! ```text
//! d[X(t) - D(X(t - tau))] = b(X(t), X(t - tau)) dt + sigma(X(t), X(t - tau)) dW(t)
//! ```
//!
//! with superlinear, one-sided Lipschitz drift. The crate provides the tamed
//! theta integrator, its split-step form, the truncated variant for locally
//! one-sided Lipschitz drift, sampled checks of the structural assumptions,
//! and Monte Carlo drivers that measure strong error against a coupled
//! fine-grid reference.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod paths;
pub mod rational;
pub mod scheme;
pub mod taming;
pub mod verify;

pub use error::{Error, Result};
