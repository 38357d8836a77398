//! Late-fusion video corpus moment retrieval.
//!
//! Clip features of every video are encoded once, offline. At query time a
//! query is encoded into two modular vectors and compared against the stored
//! representations with matrix products only; a pair of learned 1D filters
//! turns the resulting query-clip similarity curve into start/end
//! probabilities.

pub mod error;
pub mod evalkit;
#[cfg(feature = "cli")]
pub mod cli;
pub mod encoder;
pub mod featstore;
pub mod momentgen;
pub mod numkit;
pub mod scorer;
pub mod trainkit;

pub use error::{Error, Result};
