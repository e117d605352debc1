use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("non-finite loss at step {step} in term `{term}`")]
    NonFinite { step: usize, term: String },

    #[error("missing backend component(s): {}", .0.join(", "))]
    MissingComponents(Vec<String>),

    #[error("no loader registered for {component} `{name}`")]
    UnknownComponent { component: String, name: String },

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
