use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: plimit_core::Error,
    },
    #[error("{path}: {source}")]
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
    /// Module that raised the error, `"cli"` for plumbing failures.
    pub fn module(&self) -> &'static str {
        match self {
            CliError::Module { module, .. } => module,
            _ => "cli",
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a core error with the module it came from.
pub trait InModule<T> {
    fn in_module(self, module: &'static str) -> CliResult<T>;
}

impl<T> InModule<T> for plimit_core::Result<T> {
    fn in_module(self, module: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Module { module, source })
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
