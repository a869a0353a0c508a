//! Config parsing and experiment dispatch behind the `ranknoise` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, Experiment, RunConfig};
pub use run::{execute, exit, Options};
