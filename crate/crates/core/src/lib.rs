//! Privacy auditing for feature-attribution explanations of tabular classifiers.

pub mod data;
pub mod error;

pub use error::{Error, Result};
pub mod nn;
pub mod dp;
pub mod synth;
pub mod seed;
pub mod explain;
pub mod noise;
pub mod attack;
pub mod faithfulness;
pub mod pipeline;
