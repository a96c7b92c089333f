//! Batch runner: a TOML configuration selects one of the solver modes of
//! `stefan-core`; results land in an output directory as `report.json`,
//! CSV tables and `manifest.json`.
//!
//! The schema is documented in [`config`]. Exit status: 0 on success,
//! 1 for invalid input, 2 for a solver failure, 3 for IO errors.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{Mode, RunConfig};
pub use error::CliError;
pub use run::{run_file, Overrides, RunOutcome};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
