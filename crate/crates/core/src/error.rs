use std::path::PathBuf;

use crate::dataset::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("no records")]
    NoRecords,

    #[error("line {line}: rating {value} is outside the 1-5 scale")]
    RatingOutOfRange { line: u64, value: i64 },

    #[error("duplicate rating for sample '{sample}', rater '{rater}', task {task}")]
    DuplicateRating {
        sample: String,
        rater: String,
        task: TaskId,
    },

    #[error("sample '{sample}' has no ratings for task {task}")]
    NoRatings { sample: String, task: TaskId },

    #[error("rater '{rater}' did not rate sample '{sample}' for task {task}")]
    RatingNotFound {
        sample: String,
        rater: String,
        task: TaskId,
    },

    #[error("sample '{sample}' has {count} rating(s) for task {task}; at least {needed} required")]
    TooFewRatings {
        sample: String,
        task: TaskId,
        count: usize,
        needed: usize,
    },

    #[error("rater '{rater}' has {count} usable sample(s) for task {task}; at least {needed} required")]
    TooFewSamples {
        rater: String,
        task: TaskId,
        count: usize,
        needed: usize,
    },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("duplicate sample id '{0}'")]
    DuplicateSample(String),

    #[error("dataset has no labeled cells")]
    NoLabels,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("batch has no unmasked label cells")]
    NoUnmaskedCells,

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid trim fraction {0}: must lie in [0, 1)")]
    InvalidTrimFraction(f64),

    #[error("non-finite loss at cell {0}")]
    NonFiniteLoss(usize),

    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("series too short: {found} element(s), at least {needed} required")]
    SeriesTooShort { found: usize, needed: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown model '{0}'; valid names: single, multi, multi,split, multi,split,W, multi,split,semi")]
    UnknownModel(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
