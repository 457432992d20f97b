//! File formats, map rendering and the command-line pipeline around
//! `telegraph-core`.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod chain;
pub mod cli;
pub mod config;
pub mod error;
pub mod maps;
pub mod pipeline;
pub mod scanset;

pub use config::RunConfig;
pub use error::{CliError, Result};
