//! Exact finite-state sensitivity analysis for Markov chains.
//!
//! Weighted norms and resolvents live in [`kernel_algebra`]; parameterized
//! kernels in [`param_family`]; random-horizon values and their derivatives in
//! [`random_horizon`]; stationary expectations in [`stationary`].

pub mod error;
pub mod kernel_algebra;
pub mod matrix_csv;
pub mod param_family;
pub mod random_horizon;
pub mod stationary;

pub use error::{Error, Result};
pub use kernel_algebra::{
    FiniteFunction, FiniteKernel, FiniteMeasure, Resolvent, StateSpace, StateSubset, WeightFunction,
};
pub use param_family::{builtin, EnvelopeMatrix, FamilyDomain, ParamKernelFamily};
pub use random_horizon::{LyapunovCertificateRH, TargetProblem};
