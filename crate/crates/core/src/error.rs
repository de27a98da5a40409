use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: String,
        expected: Shape,
        got: Shape,
    },

    #[error("cross_entropy: label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Shape),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical integrity: imaginary residual {residual:e} exceeds tolerance {tolerance:e}")]
    NumericalIntegrity { residual: f64, tolerance: f64 },

    #[error("non-finite values produced by {0}")]
    NonFinite(String),

    #[error("uncalibrated model: no source prototype available for test-time calibration")]
    Uncalibrated,

    #[error("prototype bank is empty: no source statistics seen")]
    EmptyBank,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("{}: {message} (at byte offset {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, expected: Shape, got: Shape) -> Self {
        Error::ShapeMismatch {
            op: op.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::LabelOutOfRange { .. }
            | Error::NonScalarLoss(_)
            | Error::InvalidArgument(_) => "invalid-argument",
            Error::NumericalIntegrity { .. } | Error::NonFinite(_) | Error::Divergence { .. } => {
                "numerical"
            }
            Error::Uncalibrated | Error::EmptyBank => "uncalibrated",
            Error::Format { .. } => "format",
            Error::MissingFile(_) | Error::Io { .. } => "io",
            Error::Config(_) | Error::Json(_) => "config",
            Error::Csv(_) => "io",
        }
    }
}
