//! Monte Carlo sensitivity estimation for Markov chains written as stochastic
//! recursions `X_{n+1} = r(X_n, Z_{n+1})` whose noise law depends on `theta`.
//!
//! [`recursion`] defines the model interface and path simulation,
//! [`estimators`] the likelihood-ratio and regenerative estimators,
//! [`finite_chain`] embeds a finite parameterized chain as a recursion so the
//! estimators can be checked against exact solves, and [`gg1`] is the
//! Pareto-service single-server queue.

// `!(x >= 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod finite_chain;
pub mod gg1;
pub mod quadrature;
pub mod recursion;
pub mod rng;
pub mod stats;

use thiserror::Error;

pub use estimators::{
    check_recursion_lyapunov, estimate_gamma_regenerative, estimate_pi_f, estimate_stationary_derivative,
    estimate_u_star, estimate_u_star_derivative, Payoff, Regeneration,
};
pub use finite_chain::FiniteChainRecursion;
pub use recursion::{simulate_path, Path, StochasticRecursion, Stop, ThetaIndependent, DEFAULT_PATH_CAP};
pub use rng::{RngStream, SimRng};
pub use stats::{DerivativeEstimate, RatioEstimate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    /// A path hit the step cap before its stopping rule fired. The whole
    /// estimate is abandoned rather than biased by a cut path.
    #[error("path truncated: stopping rule not reached within the cap of {cap} steps (the stopping time must be finite almost surely)")]
    Truncation { cap: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The model violates a hypothesis, for example queue stability.
    #[error("model refused: {0}")]
    Refusal(String),

    #[error(transparent)]
    Core(#[from] lyapsens_core::Error),
}
