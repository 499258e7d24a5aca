//! Crate-wide error type.
//!
//! Contract violations inside the math layer (shape mismatches, simplex
//! violations) panic; everything a caller can plausibly recover from or that
//! depends on external data flows through [`Error`].

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum Error {
    /// Shapes or sizes disagree at a module boundary.
    Dimension(String),
    /// Invalid or inconsistent configuration (also covers usage errors).
    Config(String),
    /// A contract on input data was violated (empty mask, misaligned lists).
    Contract(String),
    /// A metric is undefined for the given inputs (single-class AUROC, AP
    /// without positives). Reported, never silently defaulted.
    UndefinedMetric(String),
    /// Filesystem failure with the offending path.
    Io { path: PathBuf, source: io::Error },
    /// Image decode/encode failure.
    Image(String),
    /// Malformed serialized data (manifest, checkpoint, config file).
    Format(String),
    /// Training aborted; carries the diagnostic dump.
    Training(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for usage/config errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Image(msg) => write!(f, "image error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Training(msg) => write!(f, "training aborted: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
