use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("delta is not mass-free: |sum delta h| = {0:e} > 1e-8")]
    NonZeroMass(f64),
    #[error("linear program did not reach the requested gap: {0}")]
    LinearProgram(String),
    #[error("singular linear solve (condition estimate {condition:e})")]
    SingularSolve { condition: f64 },
    #[error("no smoothing: the generator family has no diffusive or fractional part")]
    NoSmoothing,
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("Picard iteration did not contract after {depth} horizon splits; diffs {history:?}")]
    NonContraction { depth: usize, history: Vec<f64> },
    #[error("positivity defect {defect:e} exceeds 0.01")]
    PositivityDefect { defect: f64 },
    #[error("argmax uniqueness violated at t = {t} ({count} tied nodes)")]
    ArgmaxTie { t: f64, count: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
