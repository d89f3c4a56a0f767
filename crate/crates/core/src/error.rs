use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("symmetry class mismatch")]
    SymmetryMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("eigendecomposition failed to converge")]
    Eigensolver,

    #[error("eigenvectors were not computed")]
    MissingEigenvectors,

    #[error("density {rho:e} at energy {energy} is not positive")]
    NonPositiveDensity { energy: f64, rho: f64 },

    #[error("MDE solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("eta continuation failed at energy {energy}")]
    ContinuationFailed { energy: f64 },

    #[error("index {index} is outside 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("quantile {index}/{n} is not in the bulk (density {rho:e} below {threshold})")]
    NotInBulk {
        index: usize,
        n: usize,
        rho: f64,
        threshold: f64,
    },

    #[error("stability factor {0:e} is below the singularity threshold")]
    Singular(f64),

    #[error("sigma-form branch lost at t = {t}: radicand {radicand:e}")]
    BranchLoss { t: f64, radicand: f64 },

    #[error("ODE step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("requested point {point} outside tabulated range [{lo}, {hi}]")]
    OutsideRange { point: f64, lo: f64, hi: f64 },

    #[error("eigenvalue ordering violated after {halvings} step halvings")]
    OrderingViolation { halvings: usize },

    #[error("random substream path {0} was issued twice")]
    DuplicateSubstream(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
