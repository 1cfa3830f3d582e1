use std::path::Path;

use claimdecomp::conllu::ConlluError;
use claimdecomp::corpus::CorpusError;
use claimdecomp::decompose::DecomposeError;
use claimdecomp::llm::LlmError;
use claimdecomp::metrics::MetricsError;
use claimdecomp::predarg::PredargError;
use claimdecomp::retrieval::RetrievalError;
use claimdecomp::validate::ValidateError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_AUDIT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Conllu(#[from] ConlluError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("audit found {0} mismatching cells")]
    Audit(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Llm(_)
            | CliError::Decompose(DecomposeError::Llm(_))
            | CliError::Decompose(DecomposeError::Predarg(PredargError::Rewrite { .. }))
            | CliError::Validate(ValidateError::Llm(_))
            | CliError::Validate(ValidateError::Nli(_))
            | CliError::Validate(ValidateError::InvalidVerdict(_)) => EXIT_ENDPOINT,
            CliError::Audit(_) => EXIT_AUDIT,
            _ => EXIT_INPUT,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
