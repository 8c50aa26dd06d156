use std::path::PathBuf;

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on user-supplied data failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Geometry too degenerate to process (coincident/collinear points,
    /// constant depth, empty mask, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A structured file did not match its expected layout. `offset` is the
    /// byte position at which parsing failed, when known.
    #[error("malformed file {path}: {message}{}", offset.map(|o| format!(" (byte {o})")).unwrap_or_default())]
    Format {
        path: PathBuf,
        message: String,
        offset: Option<u64>,
    },

    /// A simulation state component exceeded the divergence bound.
    #[error("simulation diverged at step {step} (t = {t} s): |{component}| = {value:e} exceeds {bound:e}")]
    Diverged {
        step: usize,
        t: f64,
        component: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>, offset: Option<u64>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
            offset,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
