use std::path::PathBuf;

use hire_tensor::TensorError;

use crate::data::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("malformed binary file: {0}")]
    Format(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph has no {0}")]
    EmptyGraph(&'static str),
    #[error("scenario {scenario} incompatible with dataset: {reason}")]
    IncompatibleScenario { scenario: Scenario, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("schema mismatch: model expects {expected}, data has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("category {index} out of range for {slot} (cardinality {card})")]
    CategoryOutOfRange {
        slot: String,
        index: usize,
        card: usize,
    },
    #[error("no query cells in the batch")]
    EmptyQuery,
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
