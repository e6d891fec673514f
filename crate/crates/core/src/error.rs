use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown potential family `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("eigensolver failed at X = {x}")]
    Eigen { x: f64 },
    #[error("degenerate level {level} at X = {x}")]
    Degenerate { x: f64, level: usize },
    #[error("model has a single level, no gap is defined")]
    NoExcitedLevel,
    #[error("level crossing at X = {x}")]
    Crossing { x: f64 },
    #[error("time step {dt} exceeds the stiffness limit {dt_max}")]
    StiffnessGuard { dt: f64, dt_max: f64 },
    #[error("electron amplitude norm off by {0:e}")]
    NormDrift(f64),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("turning point near X = {x}")]
    TurningPoint { x: f64 },
    #[error("no return to the surface within t_max = {t_max}")]
    UnboundedHitting { t_max: f64 },
    #[error("no quantized energy above the barrier for k = {k}")]
    NoQuantizedRoot { k: i64 },
    #[error("caustics at {0:?}")]
    Caustic(Vec<f64>),
    #[error("phase mismatch {0:e} at the seam, energy is not quantized")]
    NonQuantized(f64),
    #[error("grid of {given} points is under-resolved, need at least {required}")]
    Resolution { required: usize, given: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("degenerate critical point at s = {0}")]
    DegenerateCriticalPoint(f64),
    #[error("critical points at {0} and {1} are too close")]
    OverlappingCriticalPoints(f64, f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
