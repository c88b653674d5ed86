use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward already ran on this tape; rebuild the forward pass first")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error("image: {0}")]
    Image(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("missing checkpoint for restorer kind `dir`")]
    MissingCheckpoint,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    /// Stable machine-readable code, printed by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "E_DIM",
            Error::InvalidArgument(_) => "E_ARG",
            Error::BackwardTwice => "E_TAPE",
            Error::NonScalarLoss(_) => "E_TAPE",
            Error::NonFinite(_) => "E_NONFINITE",
            Error::Format(_) => "E_FORMAT",
            Error::Image(_) => "E_IMAGE",
            Error::GradCheck(_) => "E_GRADCHECK",
            Error::MissingCheckpoint => "E_CHECKPOINT",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_CONFIG",
        }
    }
}
