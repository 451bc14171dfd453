use std::io;

/// Errors raised by the conversion runtime and its building blocks.
///
/// Variants follow failure classes rather than modules so callers (the CLI
/// exit-code map, the service protocol) can branch on the class.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A buffer or chunk has the wrong number of samples.
    #[error("sizing error: {0}")]
    Sizing(String),

    /// Input data is unusable (NaN, infinite, out of range).
    #[error("data error: {0}")]
    Data(String),

    /// Graph, tensor or state shapes disagree.
    #[error("structural error: {0}")]
    Structural(String),

    /// A binary container has the wrong magic or version.
    #[error("format error: {0}")]
    Format(String),

    /// A binary container ended early or has trailing bytes.
    #[error("length error: {0}")]
    Length(String),

    /// A container decoded but holds invalid values.
    #[error("validation error: {0}")]
    Validation(String),

    /// A pitch posterior carries no evidence.
    #[error("decode error: {0}")]
    Decode(String),

    /// A caller-supplied parameter is out of its domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Speaker enrollment could not produce an embedding.
    #[error("enrollment error: {0}")]
    Enrollment(String),

    /// An operation was attempted in the wrong session state.
    #[error("state error: {0}")]
    State(String),

    /// Correlation is undefined for the given contours.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
