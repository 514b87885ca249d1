use thiserror::Error;

/// Errors produced by the simulator, the analytic oracle and the experiment parser.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("null branch: state has zero norm")]
    NullBranch,

    #[error("port `{0}` is not present at this stage")]
    UnknownPort(String),

    #[error("port labels differ: {left:?} vs {right:?}")]
    LabelMismatch { left: [String; 2], right: [String; 2] },

    #[error("undefined conditional: {0}")]
    UndefinedConditional(String),

    #[error("undefined weak value: pre- and post-selected states are orthogonal")]
    UndefinedWeakValue,

    #[error("numeric guard: {0}")]
    NumericGuard(String),

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("malformed record at row {row}, column {column}: {message}")]
    Record { row: u64, column: String, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
