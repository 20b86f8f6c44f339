//! File formats, experiment drivers and the `riskctl` command line on top of
//! [`riskctl_core`].

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod results;

pub use error::{CliError, ExitCode};
