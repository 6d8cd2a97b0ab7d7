//! File formats, run manifests, and command implementations for the
//! `pstrat` binary. The algorithmic machinery lives in `pstrat-core`;
//! everything here is IO: CSV panels, columnar draws files, JSON manifests
//! and reports, and the clap-driven command surface.

pub mod commands;
pub mod config;
pub mod csv_io;
pub mod draws_io;
pub mod error;
pub mod manifest;
pub mod report;
pub mod schema;
pub mod spec_io;

pub use error::{CliError, EXIT_DIAGNOSTICS, EXIT_OK, EXIT_VALIDATION};
