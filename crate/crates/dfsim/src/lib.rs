// SPDX-License-Identifier: Apache-2.0

//! Scenario files, parallel sweeps and result tables on top of `dfsim-core`.

use std::path::PathBuf;

use rayon::prelude::*;

use dfsim_core::scenario::{run_point, RunOutcome, ScenarioConfig};

pub mod file;
pub mod output;

pub use dfsim_core;
pub use file::ScenarioFile;
pub use output::{emit_results, format_float, write_results, Format};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dfsim_core::Error),
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no result rows to write")]
    NoRows,
}

/// Runs every sweep point of `config` on the rayon pool. Outcomes come back
/// in sweep order regardless of scheduling.
pub fn run_parallel(config: &ScenarioConfig) -> Result<Vec<RunOutcome>, Error> {
    config.validate()?;
    let points = config.expand();
    let mut outcomes = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| run_point(config, p).map(|o| (i, o)))
        .collect::<Result<Vec<_>, _>>()?;
    outcomes.sort_by_key(|(i, _)| *i);
    Ok(outcomes.into_iter().map(|(_, o)| o).collect())
}
