use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("InsufficientData: {0}")]
    InsufficientData(String),

    #[error("ThresholdUndefined: found {found} local minima, need 3")]
    ThresholdUndefined { found: usize },

    #[error("ModelMismatch: {0}")]
    ModelMismatch(String),

    #[error("BehindCamera: point at camera depth {depth} m")]
    BehindCamera { depth: f64 },

    #[error("DegenerateAlignment: {0}")]
    DegenerateAlignment(String),

    #[error("ScriptInfeasible: {0}")]
    ScriptInfeasible(String),

    #[error("InvalidInput: {0}")]
    InvalidInput(String),

    #[error("ConfigError: {0}")]
    Config(String),

    #[error("NumericalFailure: {0}")]
    Numerical(String),

    #[error("ParseError: {path}: {message}")]
    Parse { path: String, message: String },

    #[error("IoError: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}
