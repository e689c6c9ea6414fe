//! Effective-prior estimation and post-hoc prior correction for long-tailed
//! classifiers.

pub mod adjust;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod cli;
pub mod logits;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod prior;
pub mod pipeline;
pub mod scores;

pub use error::{Error, Result};
