use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),

    #[error("duplicate run ({task_id}, {setup_id}, {run_index})")]
    DuplicateRun {
        task_id: String,
        setup_id: String,
        run_index: u32,
    },

    #[error("task `{task}` has invalid descriptor `{key}`: {value}")]
    InvalidDescriptor {
        task: String,
        key: String,
        value: f64,
    },

    #[error("quality {value} at line {line} is outside [0, 1]")]
    InvalidQuality { line: usize, value: f64 },

    #[error("run references unknown task `{0}`")]
    UnknownTask(String),

    #[error("hyperparameter arity mismatch: expected {expected}, found {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("no runs for task `{task}` under setup `{setup}`")]
    NoRuns { task: String, setup: String },

    #[error("quality list is empty")]
    EmptyQualities,

    #[error("task set is empty")]
    EmptyTaskSet,

    #[error("value {0} is outside the open interval (0, 1)")]
    Domain(f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("correlation needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("task `{task}` is missing descriptor `{key}`")]
    MissingDescriptor { task: String, key: String },

    #[error("surrogate training set is empty")]
    EmptyTrainingSet,

    #[error("holdout task `{task}` has {found} baseline runs, at least 3 are required")]
    InsufficientHoldoutRuns { task: String, found: usize },

    #[error("oracle similarity needs at least 3 setups, got {0}")]
    InsufficientSetups(usize),

    #[error("train set is empty")]
    EmptyTrainSet,

    #[error("filter selected no tasks")]
    EmptyFilterOutput,

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error(
        "oracle similarity needs full access to holdout runs, but the holdout store is descriptor-only"
    )]
    OracleAccessDenied,

    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed input or a forbidden request rather
    /// than by missing data or the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateTask(_)
                | Error::DuplicateRun { .. }
                | Error::InvalidDescriptor { .. }
                | Error::InvalidQuality { .. }
                | Error::UnknownTask(_)
                | Error::ArityMismatch { .. }
                | Error::OracleAccessDenied
                | Error::InvalidSpec(_)
        )
    }
}
