use thiserror::Error;

use crate::domain::DomainError;
use crate::gateway::GatewayError;
use crate::semantic::SemanticError;
use crate::templates::TemplateError;

/// A model response that could not be turned into structured output.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unparseable response: {0}")]
    Unparseable(String),
    #[error("unparseable decision: {0}")]
    UnparseableDecision(String),
    #[error("malformed code: {0}")]
    MalformedCode(String),
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{stage} failed: {message}")]
    Failed { stage: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl StageError {
    pub fn failed(stage: &'static str, message: impl Into<String>) -> Self {
        StageError::Failed {
            stage,
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        StageError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
