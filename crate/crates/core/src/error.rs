use std::path::PathBuf;

/// Crate-wide error type. Variants are grouped by how a caller should react:
/// `Config` means the request itself was malformed, `Data`/`Format`/`Io`
/// mean the inputs on disk are unusable, `Shape` and `Numeric` mean the
/// computation cannot proceed.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or parameter dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values or degenerate statistics where finite math is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset content problems: missing images, malformed label rows, bad scores.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed serialized artifacts: checkpoints, probability tables, traces.
    #[error("format error: {0}")]
    Format(String),

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
