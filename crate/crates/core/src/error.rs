use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum JeqError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("metric is not positive at grid point {index} (min eigenvalue {min_eig:e})")]
    NonPositiveMetric { index: usize, min_eig: f64 },

    #[error("weight is not positive at grid point {index}")]
    NonPositiveWeight { index: usize },

    #[error("Newton iteration stalled at residual {residual:e}: {reason}")]
    NewtonStalled { residual: f64, reason: String },

    #[error("linear solve failed after {iterations} iterations (relative residual {relative_residual:e})")]
    LinearSolveFailed {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("Newton iteration limit reached with residual {residual:e}")]
    MaxIters { residual: f64 },

    #[error("continuation failed at t = {t}: step size {dt:e} underflowed")]
    ContinuationFailed { t: f64, dt: f64 },

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("fiber coefficient is not positive at t-node {node} (c = {c:e})")]
    MetricDegenerate { node: usize, c: f64 },

    #[error("tail extrapolation failed: {0}")]
    TailFitFailed(String),

    #[error("translation window [{start}, {end}] exceeds the profile range ending at {t_max}")]
    WindowTooShort { start: f64, end: f64, t_max: f64 },

    #[error("flat tail, decay rate unidentifiable (c_inf = {c_inf})")]
    FitDegenerate { c_inf: f64 },

    #[error("solvability violated: c = {given} but the area ratio is {expected}")]
    SolvabilityViolated { given: f64, expected: f64 },

    #[error("density is not positive at grid point {index}")]
    NonPositiveDensity { index: usize },

    #[error("measure is not normalized (mass {mass})")]
    NotNormalized { mass: f64 },

    #[error("degenerate pairing: [omega].[chi] = 0")]
    DegeneratePairing,

    #[error("degenerate restriction: [omega].[D] = {0} is not positive")]
    DegenerateRestriction(String),

    #[error("condition violated: 2 C_D = {two_cd} <= C = {c}")]
    ConditionViolated { two_cd: String, c: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for JeqError {
    fn from(e: std::io::Error) -> Self {
        JeqError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, JeqError>;
