//! Command-line front end: CSV ingestion, versioned JSON configs and the
//! report files written by `elwqr`.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixture;
pub mod io;
pub mod report;

pub use commands::run;
pub use error::{CliError, CliResult};
