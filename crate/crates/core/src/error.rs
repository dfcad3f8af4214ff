use std::io;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("odd extent {height}x{width}: the Haar transform requires even height and width")]
    OddExtent { height: usize, width: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("missing weight `{0}`")]
    MissingWeight(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::OddExtent { .. } => "odd_extent",
            Error::InvalidParam(_) => "invalid_param",
            Error::Degenerate(_) => "degenerate",
            Error::NonFinite(_) => "non_finite",
            Error::Format(_) => "format",
            Error::MissingWeight(_) => "missing_weight",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// True for numerical degeneracies (as opposed to validation failures).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
