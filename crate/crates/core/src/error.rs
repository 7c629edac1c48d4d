use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("contract violated in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("degenerate scale for channel {channel}: |gamma| = {value:e}")]
    DegenerateScale { channel: usize, value: f64 },

    #[error("degenerate channel `{channel}`: training std {std:e} is below 1e-12")]
    DegenerateChannel { channel: String, std: f64 },

    #[error("schema error in {file}{}: {msg}", location(*.row, .column.as_deref()))]
    Schema {
        file: String,
        row: Option<usize>,
        column: Option<String>,
        msg: String,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training aborted at step {step}: {msg}")]
    TrainingAborted { step: usize, msg: String },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(row: Option<usize>, column: Option<&str>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" (row {r}, column `{c}`)"),
        (Some(r), None) => format!(" (row {r})"),
        (None, Some(c)) => format!(" (column `{c}`)"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        expected: impl Into<String>,
        got: impl Into<String>,
    ) -> Self {
        Error::Dimension {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
