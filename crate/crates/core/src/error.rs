use thiserror::Error;

/// Errors produced anywhere in the rendezvous pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid orbit parameters: {0}")]
    InvalidOrbit(String),

    #[error("invalid anomaly grid: {0}")]
    InvalidGrid(String),

    #[error("L matrix is singular at nu = {nu} (rho = {rho})")]
    SingularL { nu: f64, rho: f64 },

    #[error(
        "quadrature did not converge for stage {stage}: doubling the node count changed B by {change:e} (relative)"
    )]
    QuadratureNonconvergence { stage: usize, change: f64 },

    #[error("discrete STM index order violated: k = {k} < m = {m}")]
    IndexOrder { k: usize, m: usize },

    #[error("stage index {index} out of range for N = {stages}")]
    StageOutOfRange { index: usize, stages: usize },

    #[error("state vector is in the {found} frame, expected {expected}")]
    FrameMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("Gramian is numerically singular (uncontrollable system or degenerate weights)")]
    SingularGramian,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("LP is infeasible (residual after phase one: {0:e})")]
    Infeasible(f64),

    #[error("invalid LP input: {0}")]
    InvalidLp(String),

    #[error("unknown mission preset `{0}` (expected `gto` or `atv`)")]
    UnknownPreset(String),

    #[error("mission config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid mission field `{field}`: {message}")]
    InvalidField { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
