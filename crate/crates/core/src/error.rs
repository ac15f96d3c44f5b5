use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("invalid HS code {code:?}: {reason}")]
    InvalidCode { code: String, reason: &'static str },

    #[error("invalid sentence id {0:?}")]
    InvalidSentenceId(String),

    #[error("duplicate case id {0:?}")]
    DuplicateId(String),

    #[error("duplicate heading {0}")]
    DuplicateHeading(String),

    #[error("knowledge base entry {case_id:?} resolves to no manual sentence")]
    EmptyEvidence { case_id: String },

    #[error("split of {requested} cases requested from a collection of {available}")]
    Split { requested: usize, available: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("label {label} is not in the model's label index")]
    LabelCoverage { label: String },

    #[error("empty description")]
    EmptyDescription,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("empty knowledge base")]
    EmptyKnowledgeBase,

    #[error("heading {0} has no manual entry")]
    UnknownHeading(String),

    #[error("length mismatch: {predictions} predictions vs {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },

    #[error("expert evidence set is empty")]
    EmptyExpertSet,

    #[error("degenerate regression input: {0}")]
    DegenerateInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed model artifact: {0}")]
    Artifact(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl ToString) -> Self {
        Error::Parse {
            line,
            message: message.to_string(),
        }
    }

    pub fn validation(line: usize, message: impl ToString) -> Self {
        Error::Validation {
            line,
            message: message.to_string(),
        }
    }

    /// Stable machine-readable code, used by the HTTP layer and CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IO_ERROR",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::Validation { .. } | Error::InvalidCode { .. } | Error::InvalidSentenceId(_) => "VALIDATION_ERROR",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::DuplicateHeading(_) => "DUPLICATE_HEADING",
            Error::EmptyEvidence { .. } => "EMPTY_EVIDENCE",
            Error::Split { .. } => "SPLIT_ERROR",
            Error::EmptyCorpus => "EMPTY_CORPUS",
            Error::LabelCoverage { .. } => "LABEL_COVERAGE",
            Error::EmptyDescription => "EMPTY_DESCRIPTION",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::EmptyKnowledgeBase => "EMPTY_KNOWLEDGE_BASE",
            Error::UnknownHeading(_) => "UNKNOWN_HEADING",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::EmptyExpertSet => "EMPTY_EXPERT_SET",
            Error::DegenerateInput(_) => "DEGENERATE_INPUT",
            Error::Config(_) => "INVALID_CONFIG",
            Error::Artifact(_) => "BAD_ARTIFACT",
        }
    }
}
