use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("half-space violates the admissible class for this domain: {0}")]
    ClassViolation(String),

    #[error("no grid-compatible half-space exists for this grid")]
    EmptyClass,

    #[error("operation requires a {expected} domain")]
    DomainMismatch { expected: &'static str },

    #[error("operation requires a {expected} grid")]
    GridMismatch { expected: &'static str },

    #[error("field length {got} does not match the grid cell count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("integrand returned a non-finite value at cell {cell}")]
    NonFinite { cell: usize },

    #[error("invalid growth parameters: {0}")]
    InvalidGrowth(String),

    #[error("a-priori bound violated: |Du|_p = {measured} > bound {bound}")]
    AssertionFailure { measured: f64, bound: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("polarization increased the functional by {excess} (> tolerance {tol})")]
    PolarAssumptionViolated { excess: f64, tol: f64 },

    #[error("iteration budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("inf estimate drift: iterate value {value} beats estimate {estimate} by more than {eps}")]
    InfEstimateDrift { value: f64, estimate: f64, eps: f64 },

    #[error("lattice admits no Ekeland point: {0}")]
    EmptyAdmissible(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown integrand `{0}`")]
    UnknownIntegrand(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
