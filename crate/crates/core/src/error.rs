use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::kernel::FootprintViolation;
use crate::region::Region;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegionError {
    #[error("unsupported dimensionality {0} (expected 1 to 3)")]
    BadDims(usize),
    #[error("dimension mismatch: {left}D vs {right}D")]
    DimensionMismatch { left: usize, right: usize },
    #[error("inverted bounds in dimension {dim}: min {min} > max {max}")]
    Inverted { dim: usize, min: i64, max: i64 },
}

/// Kernel text that does not conform to the grammar or names something
/// undeclared. `position` is a 0-based byte offset into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at column {}", .position + 1)]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownName(String),
    NotReadable(String),
    NonConstantOffset,
    BadComponent { component: usize, dims: usize },
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ParseErrorKind::UnknownName(name) => write!(f, "unknown name `{name}`"),
            ParseErrorKind::NotReadable(name) => {
                write!(f, "`{name}` is not a read accessor")
            }
            ParseErrorKind::NonConstantOffset => {
                f.write_str("index offset must be an integer constant")
            }
            ParseErrorKind::BadComponent { component, dims } => {
                write!(f, "id component i.{component} out of range for a {dims}D kernel")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Region(#[from] RegionError),

    #[error("task `{task}`, body of `{accessor}`: {source}")]
    Parse {
        task: String,
        accessor: String,
        #[source]
        source: ParseError,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("task `{task}` reads outside its range mappers: {}", fmt_violations(.violations))]
    Footprint {
        task: String,
        violations: Vec<FootprintViolation>,
    },

    #[error("mapper violation in task `{task}`: accessor `{accessor}` read index {index} outside its mapped region")]
    MapperViolation {
        task: String,
        accessor: String,
        index: String,
    },

    #[error("evaluation error in task `{task}` at id {index}: {message}")]
    Evaluation {
        task: String,
        index: String,
        message: String,
    },

    #[error("uninitialized read: task `{task}` reads buffer `{buffer}` region {region} which was never written")]
    UninitializedRead {
        task: String,
        buffer: String,
        region: Region,
    },

    #[error("{field}: {message}")]
    Scenario { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Usage and I/O problems, as opposed to rejected programs.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Io { .. })
    }

    pub(crate) fn scenario(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Error::Scenario {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

fn fmt_violations(v: &[FootprintViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
