use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    #[error("expected a 1x1 scalar, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    #[error("node {0} was not produced on this tape")]
    NotOnTape(usize),

    #[error("entmax-1.5 bisection did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("gradient for parameter `{0}` is not finite")]
    NanGradient(String),

    #[error("invalid class index {index} (task has {classes} classes)")]
    InvalidClass { index: f64, classes: usize },

    #[error("epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<GateError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("{0}: file is empty")]
    EmptyFile(PathBuf),

    #[error("class `{class}` has {rows} rows, fewer than the {splits} requested splits")]
    ClassTooSmall {
        class: String,
        rows: usize,
        splits: usize,
    },

    #[error("preprocessing mismatch: {0}")]
    Preprocessing(String),

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("unsupported checkpoint version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checkpoint is truncated")]
    Truncated,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("gradient check failed: {}", .0.join("; "))]
    GradientCheck(Vec<String>),
}

impl GateError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GateError::InvalidConfig(_) => 1,
            GateError::Io { .. }
            | GateError::Data(_)
            | GateError::MissingColumn(_)
            | GateError::ParseCell { .. }
            | GateError::EmptyFile(_)
            | GateError::ClassTooSmall { .. }
            | GateError::Preprocessing(_)
            | GateError::InvalidClass { .. }
            | GateError::Checksum
            | GateError::Version { .. }
            | GateError::Truncated
            | GateError::Checkpoint(_) => 2,
            GateError::Training { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GateError::Io {
            path: path.into(),
            source,
        }
    }
}
