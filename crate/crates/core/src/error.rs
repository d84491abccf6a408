use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("grid too small: {nx}x{ny}, need at least 3x3")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("non-finite value at integration step {step}")]
    BlowUp { step: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("model error e = -1 would zero the epsilon coefficient")]
    DegenerateModelError,
    #[error("unscaled adjacency matrix has zero spectral radius; reseed")]
    ZeroSpectralRadius,
    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("ridge system is singular (beta = 0 with rank-deficient features){}", point.map(|(i, j)| format!(" at point ({i}, {j})")).unwrap_or_default())]
    SingularRidge { point: Option<(usize, usize)> },
    #[error("normalized-error denominator is zero (identically-zero truth)")]
    ZeroTruth,
    #[error("patch center ({i}, {j}) is outside the {nx}x{ny} grid")]
    OutOfGrid { i: usize, j: usize, nx: usize, ny: usize },
    #[error("insufficient data: have {have} steps, layout requires {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("empty group in aggregation")]
    EmptyGroup,
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
