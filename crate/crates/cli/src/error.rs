use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(monovi::Error),

    /// A check the run was asked to perform did not pass.
    #[error("check failed: {0}")]
    Check(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<monovi::Error> for CliError {
    fn from(e: monovi::Error) -> Self {
        use monovi::Error as E;
        match e {
            E::InvalidFunction(_)
            | E::NotMonotone(_)
            | E::InvalidExponent(_)
            | E::InvalidOperator(_)
            | E::InvalidMesh(_)
            | E::FieldLength { .. }
            | E::UnsupportedOperator(_)
            | E::SideMismatch(_) => CliError::Config(e.to_string()),
            E::BracketCheck(msg) => CliError::Check(msg),
            other => CliError::Solver(other),
        }
    }
}

/// Machine-readable form written to stderr and into the run summary.
#[derive(Debug, Serialize)]
pub struct Diagnostic {
    pub exit_code: i32,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_history: Option<Vec<f64>>,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) | CliError::Io { .. } => EXIT_SOLVER,
            CliError::Check(_) => EXIT_CHECK,
        }
    }

    pub fn diagnostic(&self) -> Diagnostic {
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::Solver(monovi::Error::InnerNotConverged { .. }) => "inner_not_converged",
            CliError::Solver(monovi::Error::OuterNotConverged { .. }) => "outer_not_converged",
            CliError::Solver(monovi::Error::MonotonicityViolated { .. }) => "monotonicity_violated",
            CliError::Solver(monovi::Error::BracketEscaped { .. }) => "bracket_escaped",
            CliError::Solver(_) => "solver",
            CliError::Check(_) => "check",
            CliError::Io { .. } => "io",
        };
        let residual_history = match self {
            CliError::Solver(monovi::Error::InnerNotConverged {
                residual_history, ..
            }) => Some(residual_history.clone()),
            _ => None,
        };
        Diagnostic {
            exit_code: self.exit_code(),
            kind,
            message: self.to_string(),
            residual_history,
        }
    }
}
