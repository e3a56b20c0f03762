//! Data pipeline, training loop, evaluation and command-line driver for the
//! `rhia-core` relation extractor.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod synth;
pub mod trainer;

pub use error::{Result, RunError};
pub use rhia_core;
