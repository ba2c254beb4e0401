//! Command-line front end for `pmq-core`: run configuration, grid files,
//! quote files and report tables.
//!
//! Exit codes: 0 success, 2 configuration or data error, 3 grid provenance
//! mismatch, 4 numerical failure (details in `diagnostics.json`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod gridfile;
pub mod quotes;
pub mod report;

pub use error::CliError;
