//! Experiment harness around `mango-core`: configuration, file formats,
//! multi-seed runs, reports and the oracle self-test.

pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod runner;
pub mod selftest;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::{Error, Result};
pub use report::emit_reports;
pub use runner::{run_experiment, RunReport};
