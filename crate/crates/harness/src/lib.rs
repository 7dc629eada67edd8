//! Experiment harness for independent causal learning: configuration,
//! training runs, trace files, discovery, evaluation and reports.

pub mod cli;
pub mod config;
pub mod discover;
pub mod error;
pub mod eval;
pub mod files;
pub mod report;
pub mod svg;
pub mod traces;
pub mod train;

pub use error::{HarnessError, Result};
