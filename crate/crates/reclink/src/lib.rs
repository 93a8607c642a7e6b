//! File formats, the experiment runner and the command-line interface built
//! on `reclink-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use error::{CliError, Result};
