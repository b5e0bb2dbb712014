//! Per-(day, city) civil-unrest probabilities from future-referencing posts.
//!
//! Stages: [`filter`] tweets to a city and a future date, [`classifier`]
//! their relevance, drop them into [`data::Jar`]s, fit [`counts`] models for
//! the dispersion `r`, update [`bayes`] strata posteriors and score with
//! [`eval`]. [`pipeline`] runs the whole chain from a config.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod classifier;
pub mod counts;
pub mod data;
pub mod error;
pub mod eval;
pub mod filter;
pub mod fmt;
pub mod pipeline;
pub mod random;
pub mod stats;

pub use error::{Error, Result};
