//! Configuration-driven runner for the geoeval workflow.

pub mod config;
pub mod error;
pub mod logging;
pub mod pipeline;
pub mod plots;
pub mod report;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
pub use pipeline::{compare_cv_modes, diagnose, evaluate, run, select, write_run};
