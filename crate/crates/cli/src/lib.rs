//! Corpus ingestion, the metrics pipeline, analysis reports and figures.
//!
//! The binary in `main.rs` is a thin clap front end over these modules.

pub mod analyze;
pub mod config;
pub mod figures;
pub mod manifest;
pub mod pipeline;
pub mod svg;

use std::path::PathBuf;

use thiserror::Error;

pub use config::Config;

/// Exit codes of the `creadraw` binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("manifest rejected ({} invalid rows):\n{}", .0.len(), manifest::format_errors(.0))]
    Manifest(Vec<manifest::RowError>),
    #[error("{analysis}: missing column(s) {columns:?}")]
    MissingColumns { analysis: String, columns: Vec<String> },
    #[error(transparent)]
    Table(#[from] creadraw_core::table::TableError),
    #[error("provider: {0}")]
    Provider(#[from] creadraw_providers::ProviderError),
    #[error("{failed} of {total} drawings failed, above the {limit}% limit; first: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: f64,
        first: String,
    },
    #[error("{0}")]
    Analysis(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", .path.display())]
    Json { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Manifest(_) | CliError::MissingColumns { .. } | CliError::Table(_) => {
                EXIT_VALIDATION
            }
            CliError::Provider(_) => EXIT_PROVIDER,
            _ => EXIT_FAILURE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
