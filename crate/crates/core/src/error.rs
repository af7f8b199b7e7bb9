use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: expected {expected} tab-separated fields, found {found}")]
    MalformedLine {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: cannot parse column `{column}` from {value:?}")]
    FieldParse {
        line: u64,
        column: &'static str,
        value: String,
    },

    #[error("line {line}: {message}")]
    InvariantViolation { line: u64, message: String },

    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: u64 },

    #[error("line {line}: request `{request_id}` reappears after its group was closed")]
    GroupingViolation { line: u64, request_id: String },

    #[error("request `{request_id}` has a clicked impression without a rank")]
    NoRankOnClicked { request_id: String },

    #[error("non-finite value: {0}")]
    NonFinite(f64),

    #[error("dwell-missing policy `mean` requires the corpus mean dwell time to be computed first")]
    PolicyUnresolved,

    #[error("query {query:?} has only {eligible} eligible documents, {requested} requested")]
    PoolExhausted {
        query: String,
        eligible: usize,
        requested: usize,
    },

    #[error("zero vector")]
    ZeroVector,

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("training diverged at epoch {epoch}")]
    DivergenceDetected { epoch: usize },

    #[error("aggregation exceeded its memory budget of {budget} bytes with spilling disabled")]
    Capacity { budget: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no {what} for {key:?}")]
    MissingEntry { what: &'static str, key: String },

    /// Inputs that are valid on their own but do not fit together.
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("bad binary format: {0}")]
    Format(String),

    #[error("I/O error after {rows} rows: {source}")]
    Io {
        rows: u64,
        #[source]
        source: io::Error,
    },
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io { rows: 0, source }
    }
}

impl Error {
    /// Errors caused by the input data rather than by the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::InvalidConfig(_))
    }
}
