use std::path::PathBuf;

use ramp_core::corpus::PoolErrors;
use ramp_core::embedding::EmbedError;
use ramp_core::evaluation::EvalError;
use ramp_core::generation::GenerationError;
use ramp_core::prompting::PromptError;
use ramp_core::retrieval::RetrievalError;
use thiserror::Error;

use crate::config::ConfigError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{} problem(s):\n  - {}", .0.len(), .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("{path}: {errors}")]
    Pool { path: PathBuf, errors: PoolErrors },
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{failed} of {total} generations failed; first error: {first}")]
    PartialGeneration { failed: usize, total: usize, first: String },
    #[error("{0} sweep cell(s) failed")]
    SweepCells(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Embed(EmbedError::RemoteUnavailable(_) | EmbedError::BadResponse(_)) => EXIT_BACKEND,
            CliError::Generation(GenerationError::Backend(_) | GenerationError::AllFailed { .. })
            | CliError::PartialGeneration { .. }
            | CliError::SweepCells(_) => EXIT_BACKEND,
            CliError::Retrieval(RetrievalError::Embed(EmbedError::RemoteUnavailable(_) | EmbedError::BadResponse(_))) => {
                EXIT_BACKEND
            }
            CliError::Retrieval(RetrievalError::IndivisibleQuota { .. } | RetrievalError::NoDonorLanguages) => {
                EXIT_VALIDATION
            }
            _ => EXIT_DATA,
        }
    }
}
