use crate::poly::PolyParseError;
use crate::sdp::SolveStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("exponent {exponent} exceeds the per-variable cap of {cap}")]
    DegreeCap { exponent: u32, cap: u32 },

    #[error("parse error at {0}")]
    Parse(#[from] PolyParseError),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("degree configuration too small for constraint '{constraint}': {detail}")]
    DegreeMismatch { constraint: String, detail: String },

    #[error("SDP solve did not reach optimality (status {status:?}): {detail}")]
    SolverFailed { status: SolveStatus, detail: String },

    #[error("could not sample region '{region}': acceptance rate {rate:.2e} below 1e-4; check the objective domain")]
    RegionSampling { region: String, rate: f64 },

    #[error("non-finite state at step {step} of path {path}")]
    NumericalFailure { path: u64, step: u64 },

    #[error("simulation aborted: non-finite state at step {step} of path {path} ({completed} paths completed, {hits} hit the target)")]
    SimulationAborted { path: u64, step: u64, completed: usize, hits: usize },

    #[error("SDPA format error on line {line}: {message}")]
    Sdpa { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
