//! Predicting which pre-trained source model will transfer best to a target
//! dataset, from dataset summaries alone.
//!
//! A dataset is represented by the normalized mean of its embedding vectors
//! under one fixed reference extractor ([`summarize`]). Each candidate source
//! is scored by its z-scaled log size plus `k` times its z-scaled distance to
//! the target ([`estimator`]); `k` and the distance kind are tuned against
//! measured transfer improvements ([`calibrate`]). The [`oracle`] module is a
//! small synthetic world with a trainable model family that produces real
//! ground-truth improvements for testing all of this end to end.

pub mod calibrate;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod estimator;
pub mod io;
pub mod oracle;
pub mod summarize;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
