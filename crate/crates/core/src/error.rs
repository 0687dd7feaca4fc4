use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("point {point:?} lies outside the grid bounds")]
    OutsideDomain { point: Vec<f64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no admissible autonomous jump at node {node} of mode {mode}")]
    NoAutonomousJump { node: usize, mode: usize },

    #[error("no admissible controlled-jump destination at node {node} of mode {mode}")]
    NoDestination { node: usize, mode: usize },

    #[error("invalid policy at node {node} of mode {mode}: {reason}")]
    InvalidPolicy { node: usize, mode: usize, reason: String },

    #[error("Courant number {courant:.4} exceeds 1 at node {node} of mode {mode}; reduce the time step")]
    CourantViolation { node: usize, mode: usize, courant: f64 },

    #[error("switching strategy contains a pure switch cycle through rows {rows:?}")]
    SwitchCycle { rows: Vec<usize> },

    #[error("matrix path requires a one-dimensional grid (got d = {0})")]
    UnsupportedDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular system: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("linear solve residual {residual:e} above tolerance {tolerance:e}")]
    ResidualNotReached { residual: f64, tolerance: f64 },

    #[error("Zeno guard tripped at t = {time}: more than {limit} consecutive zero-time jumps")]
    ZenoGuard { time: f64, limit: usize },

    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),

    #[error("trajectory time stamps are not increasing at sample {0}")]
    NonMonotoneTime(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
