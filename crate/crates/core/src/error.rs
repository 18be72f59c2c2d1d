use thiserror::Error;

/// Errors raised by the exact finite-state routines.
///
/// Variants are grouped by how a caller is expected to react: malformed input,
/// a model that violates a hypothesis (a refusal), or a numerical breakdown.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The parameterized model violates an absolute-continuity or density requirement.
    #[error("model error: {0}")]
    Model(String),

    /// No power m <= m_max gave a weighted operator norm below one. This does not
    /// prove the kernel fails to contract; it only means the check was inconclusive.
    #[error("[contraction] no m <= {m_max} with |||K^m|||_w < 1 (inconclusive); norms for m = 1.. : {norms:?}")]
    ContractionInconclusive { m_max: usize, norms: Vec<f64> },

    #[error("chain has {} recurrent classes {classes:?}; a unique stationary distribution requires exactly one", classes.len())]
    Reducible { classes: Vec<Vec<usize>> },

    #[error("derivative of order {requested} requested but the family only supplies scores up to order {available}")]
    MissingHigherScores { requested: usize, available: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    /// True for errors that signal a violated model hypothesis rather than bad
    /// input or a numerical problem.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            Error::Model(_)
                | Error::ContractionInconclusive { .. }
                | Error::Reducible { .. }
                | Error::MissingHigherScores { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
