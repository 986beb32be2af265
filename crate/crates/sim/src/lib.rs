//! Scenario runner on top of `epr-core`: configuration, parameter sweeps and
//! CSV/JSON output.

pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;

pub use config::{FileConfig, Overrides, Scenario, ScenarioConfig};
pub use error::SimError;
pub use scenarios::{run_point, run_scenario, Table};

use std::path::PathBuf;

/// Resolve, run and write one invocation; returns the written files.
pub fn execute(file: Option<FileConfig>, overrides: &Overrides, jobs: Option<usize>) -> Result<Vec<PathBuf>, SimError> {
    let jobs = jobs.or(file.as_ref().and_then(|f| f.jobs)).unwrap_or(1);
    if jobs == 0 {
        return Err(SimError::config("--jobs must be at least 1"));
    }
    let cfg = ScenarioConfig::resolve(file, overrides)?;
    let tables = run_scenario(&cfg, jobs)?;
    output::write_outputs(&cfg, &tables)
}
