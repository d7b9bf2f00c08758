//! Multi-task regression with missing labels and crowd-rater correction for
//! MOS-style quality scores.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod rater;
pub mod rng;
pub mod semisup;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
