use std::path::PathBuf;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: empty input ({detail})")]
    Empty { op: &'static str, detail: String },

    #[error("{0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,

    #[error("gradient requested on a tape recorded without gradients")]
    NoGradTape,

    #[error("SI-SDR undefined: {0}")]
    SiSdr(#[from] crate::numerics::SiSdrSingularity),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("data error in {entry}: {reason}")]
    Data { entry: String, reason: String },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(entry: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Data {
            entry: entry.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
