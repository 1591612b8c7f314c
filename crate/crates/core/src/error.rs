use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and surfaced by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation accepts.
    #[error("input domain error: {0}")]
    Domain(String),

    /// A modulation or code could not be constructed from its definition.
    #[error("construction error: {0}")]
    Construction(String),

    /// Frame or LLR lengths disagree with the trellis or interleaver.
    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A requested rate cannot be supported.
    #[error("infeasible target: {0}")]
    Infeasible(String),

    /// A definition file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
