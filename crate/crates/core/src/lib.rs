//! Hierarchical attention-based recurrent highway networks (HRHN) for
//! one-step-ahead time-series prediction with exogenous inputs.
//!
//! The encoder convolves each exogenous vector into a local feature vector
//! and runs a deep-transition recurrent highway network over the sequence.
//! The decoder attends over the encoder states of *every* transition depth,
//! fuses the concatenated context with the observed target history, and runs
//! a second highway network whose final state produces the prediction.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rhn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
