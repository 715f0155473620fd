//! Experiment driver behind the `deform-gnn` binary.
//!
//! - `config`: flat `key = value` settings, override layers and grids
//! - `commands`: train, eval, analyze, gradcheck, synth and import
//! - `webkb`: converter for raw benchmark files

pub mod commands;
pub mod config;
pub mod error;
pub mod webkb;

pub use error::{CliError, Result};
