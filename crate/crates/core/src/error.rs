use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("malformed tensor container at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("missing required tensor `{0}`")]
    MissingTensor(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence of {n_tokens} tokens exceeds the model limit of {max}")]
    SequenceTooLong { n_tokens: usize, max: usize },

    #[error("invalid pooling spec: {0}")]
    Spec(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing task directory {}", .0.display())]
    MissingTask(PathBuf),

    #[error("sentence {index}: {source}")]
    AtSentence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("example {index}: {source}")]
    AtExample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_sentence(index: usize, source: Error) -> Self {
        Error::AtSentence {
            index,
            source: Box::new(source),
        }
    }
}
