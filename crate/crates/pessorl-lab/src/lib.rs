//! Experiment plumbing around `pessorl-core`: configuration files, artifact
//! formats, and the end-to-end runner. Everything here is deterministic in
//! the config: identical configs produce byte-identical artifacts.

pub mod config;
pub mod experiment;
pub mod io;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] pessorl_core::Error),
    #[error("{0}")]
    Format(String),
}

impl LabError {
    /// Whether the failure is a configuration problem (CLI exit code 1)
    /// rather than a runtime one (exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(self, LabError::Config(_) | LabError::Toml(_))
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io {
        path: path.to_path_buf(),
        source,
    }
}
