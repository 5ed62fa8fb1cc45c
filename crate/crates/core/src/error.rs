use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pose ({x:.3}, {y:.3}) lies outside the scene bounds")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("planning failed after {iterations} iterations")]
    PlanningFailed { iterations: usize },
    #[error("sequence of length {needed} requested but no trajectory is long enough")]
    InsufficientLength { needed: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss node is not a scalar (shape {0:?})")]
    NotScalarLoss(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("label {0} outside [0, 1]")]
    LabelOutOfRange(f64),
    #[error("query contains no words")]
    EmptyQuery,
    #[error("zero-length vector")]
    ZeroVector,
    #[error("no proposals supplied")]
    NoProposals,
    #[error("no success-satisfying pose is reachable")]
    Unreachable,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
