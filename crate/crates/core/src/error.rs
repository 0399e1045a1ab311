use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A truncation cell whose probability mass underflows; callers may drop it.
    #[error("negligible-mass cell (mass {mass:e})")]
    NegligibleMass { mass: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("eigen-solver failed to converge on a {rows}x{cols} matrix: {matrix:?}")]
    EigenFailure {
        rows: usize,
        cols: usize,
        matrix: Vec<f64>,
    },

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("infeasible transport marginals: source mass {source_mass}, target mass {target_mass}")]
    InfeasibleMarginals { source_mass: f64, target_mass: f64 },

    #[error("cost matrix of {entries} entries exceeds the cap of {cap}; subsample the inputs")]
    TooLarge { entries: usize, cap: usize },

    #[error("support of {size} atoms exceeds the cap of {cap}; {hint}")]
    SupportOverflow {
        size: usize,
        cap: usize,
        hint: &'static str,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors that stem from numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NegligibleMass { .. }
                | Error::NonConvergence { .. }
                | Error::EigenFailure { .. }
                | Error::Numerical(_)
                | Error::TooLarge { .. }
                | Error::SupportOverflow { .. }
        )
    }
}
