use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {location}")]
    Numeric { location: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("class balancing gave up after {attempts} draws; per-class counts {counts:?}")]
    Balancing { attempts: usize, counts: Vec<usize> },

    #[error("search finished with no surviving architecture after {evaluated} evaluations")]
    NoSurvivor { evaluated: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Numeric { .. } => "numeric",
            Error::Format { .. } => "format",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::Balancing { .. } => "balancing",
            Error::NoSurvivor { .. } => "no_survivor",
            Error::Config(_) => "config",
            Error::MissingGroundTruth(_) => "missing_ground_truth",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
