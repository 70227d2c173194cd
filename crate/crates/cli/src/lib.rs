//! Batch runner: read an experiment config, run one task, write CSV tables,
//! a PASS/FAIL summary and a manifest.

pub mod config;
pub mod output;
mod tasks;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ExperimentConfig, Task};
pub use output::{Outcome, Table, Verdict};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("task `{task}` failed: {source}")]
    Task {
        task: &'static str,
        source: dissipative_smp::Error,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 1 for a failed task, 2 for usage and configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Task { .. } => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}

/// Exit status for a finished run: 0 iff every verdict passed.
pub fn exit_code(outcome: &Outcome) -> i32 {
    if outcome.passed() {
        0
    } else {
        1
    }
}

/// Output directory: the explicit one, else the config's, else `out/<task>`.
pub fn output_dir(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(config.task.name()))
}

/// Run `config` and write its artifacts into `dir`.
///
/// Task errors still leave a summary and manifest behind before they are
/// returned.
pub fn run(config: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let resolved = config.resolve()?;
    let mut outcome = Outcome {
        header: tasks::header(config, &resolved),
        ..Outcome::default()
    };
    match tasks::execute(config, &resolved, &mut outcome) {
        Ok(()) => {
            output::write_artifacts(dir, config, &outcome, exit_code(&outcome))?;
            Ok(outcome)
        }
        Err(source) => {
            outcome.error = Some(source.to_string());
            let err = CliError::Task {
                task: config.task.name(),
                source,
            };
            output::write_artifacts(dir, config, &outcome, err.exit_code())?;
            Err(err)
        }
    }
}
