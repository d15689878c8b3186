//! Command-line front end: experiment configuration, the end-to-end
//! pipeline and the artifacts it writes.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plots;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
