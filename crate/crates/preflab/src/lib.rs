//! IO, file formats, reports, and the CLI surface for the
//! preference-optimization laboratory. The algorithmic substance lives in
//! `preflab-core`; this crate adds:
//!
//! - [`checkpoint`]: the policy checkpoint text format (bit-exact float
//!   round-trips),
//! - [`dataset_io`]: line-delimited JSON preference datasets with a
//!   manifest header,
//! - [`report`]: deterministic CSV writers,
//! - [`expconfig`]: the TOML experiment configuration and flag overrides,
//! - [`suite`]: named oracle property checks,
//! - [`commands`]: the `train`, `analyze`, `oracle`, and `synth`
//!   subcommand implementations.

pub mod checkpoint;
pub mod commands;
pub mod dataset_io;
pub mod error;
pub mod expconfig;
pub mod report;
pub mod suite;

pub use error::{CliError, Result};
