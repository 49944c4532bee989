use thiserror::Error;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("termination signals unavailable for subject `{id}`")]
    TerminationSignalsUnavailable { id: String },
    #[error("invalid subject `{id}`: {reason}")]
    InvalidSubject { id: String, reason: String },
    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("feature width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sample sizes must be positive (got {n_a}, {n_b})")]
    NonPositiveSampleSize { n_a: f64, n_b: f64 },
    #[error("degenerate cluster")]
    DegenerateCluster,
    #[error("need at least two clusters, got {0}")]
    TooFewClusters(usize),
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("empty group")]
    EmptyGroup,
    #[error("no subjects contribute to the score")]
    EmptyContribution,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Numerical(_) | Error::DegenerateCluster => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
