use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cohort")]
    EmptyCohort,

    #[error("cohort too small to split: {0} patients (need at least 5)")]
    CohortTooSmall(usize),

    #[error("duplicate patient id `{0}`")]
    DuplicatePatient(String),

    #[error("invalid record for patient `{patient}`: {reason}")]
    InvalidRecord { patient: String, reason: String },

    #[error("future visit: patient `{patient}` visit `{visit}` at day {time} is after index date {index_date}")]
    FutureVisit {
        patient: String,
        visit: String,
        time: i64,
        index_date: i64,
    },

    #[error("{}:{line}: missing column `{column}`", path.display())]
    MissingColumn {
        path: PathBuf,
        line: u64,
        column: String,
    },

    #[error("{}:{line}: cannot parse `{value}` in column `{column}`: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
        reason: String,
    },

    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("encoder variant not implemented: `{0}`")]
    EncoderNotImplemented(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("ontology: {0}")]
    Ontology(String),

    #[error("ontology contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
