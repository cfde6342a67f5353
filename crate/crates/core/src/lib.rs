//! Directed polymers on diamond hierarchical graphs with vertex disorder.
//!
//! The crate evaluates partition functions exactly under sampled disorder,
//! iterates the variance maps of the critical `b = s` window, computes exact
//! integer moments, and runs reproducible parallel Monte Carlo over disorder
//! realizations to cross-check the exact engines.

// `!(x < y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod disorder;
mod error;
pub mod hierarchy;
pub mod moments;
pub mod montecarlo;
pub mod partition;
pub mod rng;
pub mod scaling;
pub mod variance_flow;

pub use error::{Error, Result};
