use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("invalid run: {0}")]
    InvalidRun(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("backend returned an empty response")]
    EmptyResponse,

    #[error("mock rules cannot be registered on backend {0}")]
    NotMock(String),

    #[error("dimension mismatch: index has {expected}, vector has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector cannot be scored with cosine similarity")]
    ZeroVector,

    #[error("analyzer fingerprint mismatch: index built with {index}, query analyzer is {query}")]
    AnalyzerMismatch { index: String, query: String },

    #[error("unsupported index format version {0}")]
    IndexVersion(u32),

    #[error("query_id mismatch: {0:?} vs {1:?}")]
    QueryIdMismatch(String, String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short stable label used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "schema",
            Error::DuplicateDocId(_) => "duplicate_doc_id",
            Error::InvalidRun(_) => "invalid_run",
            Error::Invalid(_) => "invalid_input",
            Error::Transport { .. } => "transport",
            Error::Status { .. } => "status",
            Error::EmptyResponse => "empty_response",
            Error::NotMock(_) => "not_mock",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroVector => "zero_vector",
            Error::AnalyzerMismatch { .. } => "analyzer_mismatch",
            Error::IndexVersion(_) => "index_version",
            Error::QueryIdMismatch(..) => "query_id_mismatch",
            Error::Config(_) => "config",
        }
    }
}
