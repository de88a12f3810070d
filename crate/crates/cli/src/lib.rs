//! Command-line front end for `progvid-core`: dataset persistence, experiment
//! configs, counterfactual edits and the six verbs of the `progvid` binary.

pub mod algorithm;
pub mod commands;
pub mod config;
pub mod edit;
pub mod error;
pub mod ppm;
pub mod store;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
