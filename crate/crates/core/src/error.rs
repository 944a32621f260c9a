use std::path::PathBuf;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("simulation diverged at step {step}: non-finite state")]
    Divergence { step: usize },

    #[error("observation at t = {time} does not coincide with a grid point")]
    Alignment { time: f64 },

    #[error("non-finite value in `{term}`")]
    Evaluation { term: &'static str },

    #[error("chain initialisation failed: `{term}` is not finite at the starting state")]
    Initialization { term: &'static str },

    #[error("chain output is empty")]
    EmptyChain,

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("unknown parameter `{name}`; available: {available}")]
    UnknownParameter { name: String, available: String },

    #[error("no dictionary term is active; inspect the inclusion probabilities before reducing the system")]
    EmptyModel,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
