use std::io;

use thiserror::Error;

use crate::model::RecordId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding has zero norm")]
    ZeroVector,

    #[error("line {line}: embedding has {found} values, header declares {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("embedding lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("record {id} does not belong to video {expected}")]
    ForeignRecord { expected: String, id: RecordId },

    #[error("duplicate record {0}")]
    DuplicateRecord(RecordId),

    #[error("record {0} has no embedding")]
    MissingEmbedding(RecordId),

    #[error("kept record {0} has no score")]
    MissingScore(RecordId),

    #[error("score {score} for record {id} is outside [0, 1]")]
    InvalidScore { id: RecordId, score: f64 },

    #[error("metric requires at least one item")]
    EmptyInput,

    #[error("similarity threshold {0} is outside [-1, 1]")]
    InvalidThreshold(f64),

    #[error("invalid size fraction: {0}")]
    InvalidFraction(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("could not satisfy the similarity margin after {attempts} attempts")]
    InfeasibleMargin { attempts: usize },

    #[error("label/verdict mismatch: {0}")]
    Join(String),

    #[error("inconsistent component annotations for video {0}")]
    Annotation(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    ///
    /// Malformed input maps to 2; input that is well formed but unusable for
    /// the requested stage (missing embeddings, missing scores, joins that do
    /// not line up) maps to 3. Everything else is 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::DuplicateRecord(_)
            | Error::ZeroVector
            | Error::Csv(_)
            | Error::Annotation(_)
            | Error::Usage(_)
            | Error::InvalidThreshold(_)
            | Error::InvalidFraction(_) => 2,
            Error::MissingEmbedding(_)
            | Error::MissingScore(_)
            | Error::InvalidScore { .. }
            | Error::Join(_) => 3,
            _ => 1,
        }
    }
}
