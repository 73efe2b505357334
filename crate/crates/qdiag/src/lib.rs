//! File formats, CSV IO, run configuration and the `qdiag` command line on
//! top of [`qdiag_core`].

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod formats;

pub use qdiag_core as core;
