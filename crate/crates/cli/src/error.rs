use std::io;
use std::path::PathBuf;

use doccheck_core::corpus::CorpusError;
use doccheck_core::detect::DetectError;
use doccheck_core::eval::EvalError;
use doccheck_core::extract::{ExtractError, ScanError};
use doccheck_core::model::{CheckpointError, ModelError};
use doccheck_core::tokenize::TokenizeError;
use doccheck_core::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("writing output: {0}")]
    Output(#[source] io::Error),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Serve(#[from] doccheck_serve::ServeError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } | CliError::Output(_) => "io",
            CliError::Config { .. } => "config",
            CliError::Scan(_) | CliError::Extract(_) => "extract",
            CliError::Corpus(_) => "dataset",
            CliError::Tokenize(_) => "tokenizer",
            CliError::Model(_) => "model",
            CliError::Checkpoint { .. } => "checkpoint",
            CliError::Train(_) => "train",
            CliError::Detect(_) => "check",
            CliError::Eval(_) => "eval",
            CliError::Serve(_) => "serve",
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string().replace('\n', " "),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}
