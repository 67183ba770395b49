//! Batch runner for the odenet construction: configuration, report files,
//! the reflection counterexample and the averaging experiments.

use std::path::{Path, PathBuf};

pub mod averaging;
pub mod config;
pub mod counterexample;
pub mod report;
pub mod run;
pub mod schedule;

pub use config::{RunConfig, TargetSpec};
pub use report::ErrorReport;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] odenet::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Writes `text` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Finishes an in-memory CSV writer.
pub(crate) fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
