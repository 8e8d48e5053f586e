use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Each variant maps onto one machine-readable category (see [`Error::category`])
/// so that command-line front ends can report failures on a single line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {what} {index} not in [0, {bound})")]
    OutOfRangeIndex {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("duplicate incidence pair (node {node}, hyperedge {edge})")]
    DuplicatePair { node: usize, edge: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value in tensor data at flat index {index}")]
    NonFinite { index: usize },

    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short name of the error kind.
    pub fn category(&self) -> &'static str {
        match self {
            Error::OutOfRangeIndex { .. } => "OutOfRangeIndex",
            Error::DuplicatePair { .. } => "DuplicatePair",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFinite { .. } => "NonFinite",
            Error::DegenerateSpec(_) => "DegenerateSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MalformedFile(_) => "MalformedFile",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
