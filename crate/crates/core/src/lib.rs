//! Importance weights for classifier evaluation and training under
//! distribution shift, via exponential tilting of the source joint.

pub mod classifier;
pub mod cli;
pub mod data;
pub mod downstream;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod oracle;
pub mod synth;
pub mod tilt;

pub use error::{Error, Result};
