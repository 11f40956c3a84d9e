use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op} of a non-positive value ({value})")]
    NonPositiveLog { op: &'static str, value: f64 },

    #[error("{0} on an empty tensor")]
    Empty(&'static str),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph has already been consumed by a previous backward pass")]
    GraphConsumed,

    #[error("{0} used before initialization")]
    Uninitialized(&'static str),

    #[error("1x1 convolution weight is singular (|det| = {det:e})")]
    SingularWeight { det: f64 },

    #[error("coupling layer needs an even channel count, got {0}")]
    OddChannels(usize),

    #[error("squeeze needs even spatial extents, got {h}x{w}")]
    OddSpatial { h: usize, w: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid degradation: {0}")]
    InvalidDegradation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(String),

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
