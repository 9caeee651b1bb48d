use std::io;

use thiserror::Error;

/// Every failure the toolkit reports. All of these are data or validation
/// errors; usage errors are handled by the command-line layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected \"EMB1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported EMB1 version {0} (only version 1 is known)")]
    UnsupportedVersion(u32),

    #[error("truncated payload at byte offset {offset} while reading {field}")]
    TruncatedPayload { offset: u64, field: String },

    #[error("invariant violation in {field}: {detail}")]
    InvariantViolation { field: String, detail: String },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("mixed provenance: {0}")]
    MixedProvenance(String),

    #[error("degenerate least-squares system: rank {rank} < {required}")]
    DegenerateSystem { rank: usize, required: usize },

    #[error("training data has a single class {0:?}; at least two are required")]
    SingleClass(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("constant input: {0} has zero variance")]
    ConstantInput(&'static str),

    #[error("label set mismatch: {0}")]
    LabelSetMismatch(String),

    #[error("missing language {0:?}")]
    MissingLanguage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {source_name} line {line}: {detail}")]
    Parse {
        source_name: String,
        line: usize,
        detail: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invariant(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvariantViolation {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    pub(crate) fn lengths(context: impl Into<String>, left: usize, right: usize) -> Self {
        Error::LengthMismatch {
            context: context.into(),
            left,
            right,
        }
    }
}
