//! File formats, run configuration and the experiment commands on top of
//! `frecas-core`.

pub mod commands;
pub mod config;
pub mod dump;
pub mod error;
pub mod manifest;
pub mod pnm;

pub use config::{BankConfig, RunConfig};
pub use error::{CliError, Result};
pub use manifest::RunManifest;
