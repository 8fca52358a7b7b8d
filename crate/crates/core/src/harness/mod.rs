//! Experiment harness behind the `uard` binary.

pub mod config;
pub mod io;
pub mod report;
pub mod suites;

pub use config::{ConfigError, ExperimentSpec, Origin};
pub use report::SuiteReport;
