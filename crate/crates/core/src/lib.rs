//! Cascaded ordinal-residual modeling of zero-inflated, long-tailed customer
//! lifetime value.
//!
//! The pipeline: a shared encoder feeds `K − 1` binary exceedance heads whose
//! chained probabilities form an ordinal bucket distribution; a gated
//! alignment layer and a dual-block residual regressor refine the value inside
//! the predicted bucket; a dedicated head with attention-guided feature noise
//! handles the top bucket.

// `!(x > 0.0)` is used on purpose throughout validation so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod cascade;
pub mod cli;
pub mod data;
pub mod error;
pub mod high_value;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;

pub use error::{LtvError, Result};
