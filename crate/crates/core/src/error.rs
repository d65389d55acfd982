use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed CSV header: {0}")]
    MalformedHeader(String),
    #[error("non-uniform time grid at row {row}: step {step} differs from {expected}")]
    NonUniformGrid { row: usize, step: f64, expected: f64 },
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty window")]
    EmptyWindow,
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("V(x) is singular or ill-conditioned at x = {at:?} (cond {cond:e})")]
    SingularV { at: Vec<f64>, cond: f64 },
    #[error("W(x) is singular or ill-conditioned at x = {at:?} (cond {cond:e})")]
    SingularW { at: Vec<f64>, cond: f64 },
    #[error("HJE residual {residual:e} exceeds tolerance at x = {at:?}")]
    HjeResidualTooLarge { residual: f64, at: Vec<f64> },
    #[error("gain condition residual {residual:e} exceeds tolerance at x = {at:?}")]
    GainConditionViolated { residual: f64, at: Vec<f64> },
    #[error("Riccati equation has no stabilizing solution: {0}")]
    RiccatiNoStabilizingSolution(String),
    #[error("Riccati iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    RiccatiNotConverged { residual: f64, iterations: usize },
    #[error("realization is not normalized")]
    NotNormalized,
    #[error("formula cross-check failed: {0}")]
    FormulaDisagreement(String),
    #[error("gamma {0} outside [0.5, 1]")]
    GammaOutOfRange(f64),
    #[error("alpha {0} outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("geodesic minimality violated by candidate {candidate}: margin {margin:e}")]
    MinimalityViolated { candidate: usize, margin: f64 },
    #[error("perturbed gain s = {0} gives an unstable observer")]
    UnstablePerturbedGain(f64),
    #[error("LS optimality violated: cost at s = {scale} is {cost:e} < nominal {nominal:e}")]
    OptimalityViolated { scale: f64, cost: f64, nominal: f64 },
    #[error("adjoint sweep did not converge (change {change:e} after {sweeps} sweeps)")]
    SweepNotConverged { change: f64, sweeps: usize },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
