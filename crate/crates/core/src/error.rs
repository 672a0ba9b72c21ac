use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("observation has zero probability under every latent class (query {query}, choice {choice})")]
    DegenerateEvidence { query: usize, choice: usize },
    #[error("observation {value} lies outside the grid [{lo}, {hi}]")]
    Support { value: f64, lo: f64, hi: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no training data: {0}")]
    TrainingData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("candidate pool exhausted")]
    PoolEmpty,
    #[error("budget error: {0}")]
    Budget(String),
    #[error("missing ground truth: member {member} has no response to query {query}")]
    DataCoverage { member: usize, query: usize },
    #[error("search space too large: {0}")]
    Scale(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error(
        "relative recovery undefined: full-information accuracy equals round-0 accuracy ({0})"
    )]
    DegenerateGap(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
