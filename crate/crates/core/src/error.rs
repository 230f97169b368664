use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular or indefinite system: {0}")]
    SingularSystem(String),

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    IterativeNonConvergence { iterations: usize, residual: f64 },

    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("iterate left the small-solution branch: |u|_inf = {norm:.3e} exceeds bound {bound:.3e}")]
    BranchEscape { norm: f64, bound: f64 },

    #[error("boundary data exceeds smallness budget: |f|_inf = {norm:.3e} >= delta = {delta:.3e}")]
    DataTooLarge { norm: f64, delta: f64 },

    #[error("corner solve failed at sign vector {signs:?}: {source}")]
    CornerFailed {
        signs: Vec<i8>,
        #[source]
        source: Box<Error>,
    },

    #[error("mollification width {sigma} is below the resolvable floor {floor}")]
    Unresolvable { sigma: f64, floor: f64 },

    #[error("weight field is not strictly positive: min = {min:.3e}")]
    NonPositiveWeight { min: f64 },

    #[error("ill-conditioned system (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
