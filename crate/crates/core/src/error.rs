use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// A line of an input file could not be parsed.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input parsed but violates a data invariant (duplicates, ranges, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An exact metric needs the label of a document that has none.
    #[error("missing group label for document {0}")]
    MissingLabel(String),

    #[error("representation target undefined: {0}")]
    UndefinedTarget(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
