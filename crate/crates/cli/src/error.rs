use std::path::Path;

use deckqa::calc::CalcError;
use deckqa::corpus::CorpusError;
use deckqa_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("calc: {0}")]
    Calc(#[from] CalcError),
    #[error("{0}")]
    Corrupt(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Model(_) => 1,
            CliError::Calc(_) => 2,
            CliError::Corrupt(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Malformed(_) => 5,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Corrupt(_) => CliError::Corrupt(e.to_string()),
            ModelError::Mismatch(_) => CliError::Mismatch(e.to_string()),
            ModelError::Config { .. } => CliError::Config(e.to_string()),
            ModelError::TooManyPages { .. } => CliError::Malformed(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Config(e.to_string())
    }
}
