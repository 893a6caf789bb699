//! Command-line front end: file formats, run manifests and subcommands.

pub mod app;
pub mod error;
pub mod io;
pub mod manifest;

pub use app::run;
pub use error::{CliError, Result};
