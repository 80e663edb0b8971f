use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid function description: {0}")]
    InvalidFunction(String),

    #[error("function is not nondecreasing: {0}")]
    NotMonotone(String),

    #[error("resolvent parameter must be positive and finite, got {0}")]
    InvalidResolventParameter(f64),

    #[error("invalid exponent p = {0} (need p > 1)")]
    InvalidExponent(f64),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("field has {got} entries, mesh has {expected} nodes")]
    FieldLength { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    #[error("inner solver did not converge in {iterations} iterations (last residual {residual:.3e})")]
    InnerNotConverged {
        iterations: usize,
        residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("outer iteration did not converge in {iterations} iterations (last increment {increment:.3e})")]
    OuterNotConverged { iterations: usize, increment: f64 },

    #[error("monotonicity violated at outer iteration {iteration}: node {node} moved by {margin:.3e} in the wrong direction")]
    MonotonicityViolated {
        iteration: usize,
        node: usize,
        margin: f64,
    },

    #[error("iterate left the order interval at outer iteration {iteration}, node {node} (excess {excess:.3e})")]
    BracketEscaped {
        iteration: usize,
        node: usize,
        excess: f64,
    },

    #[error("continuity side of g does not match the requested direction: {0}")]
    SideMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear solve failed: non-positive pivot at unknown {0}")]
    LinearSolve(usize),

    #[error("bracket check failed: {0}")]
    BracketCheck(String),
}
