use std::path::PathBuf;

/// Crate-wide error type.
///
/// `Contract` marks a violated precondition or invariant (bad shapes, bad
/// configuration values, malformed in-memory data). `Parse` marks malformed
/// bytes coming from disk. `Io` wraps the underlying OS error together with
/// the path involved. `NonFinite` aborts training when a loss component
/// stops being finite.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("training aborted at step {step}: loss component `{component}` is not finite")]
    NonFinite { step: usize, component: String },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
