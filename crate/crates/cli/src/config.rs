//! Experiment configuration. Every table rejects unknown keys, so a typo is a
//! schema error rather than a silently ignored setting.

use std::path::{Path, PathBuf};

use lyapsens_core::builtin::{self, ParetoGridSpec};
use lyapsens_core::{FiniteKernel, ParamKernelFamily};
use lyapsens_sim::gg1::{DriftConstants, DriftGrid, GG1Budget, GG1Model, ProbeConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_OUT_DIR: &str = "lyapsens-out";
pub const OUT_DIR_ENV: &str = "LYAPSENS_OUT_DIR";

/// Common header plus a kind-specific model and parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spec<P> {
    #[serde(default)]
    pub seed: u64,
    /// Not part of the config hash: moving the outputs does not change them.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub params: P,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    Norm(Spec<NormParams>),
    RhSolve(Spec<RhParams>),
    RhDeriv(Spec<RhParams>),
    StatDeriv(Spec<StatParams>),
    LyapunovCheck(Spec<LyapunovParams>),
    Minorization(Spec<MinorizationParams>),
    McEstimate(Spec<McParams>),
    Gg1(Spec<Gg1Params>),
    DeltaCi(Spec<DeltaCiParams>),
}

macro_rules! each_spec {
    ($self:expr, $s:ident => $e:expr) => {
        match $self {
            ExperimentConfig::Norm($s) => $e,
            ExperimentConfig::RhSolve($s) => $e,
            ExperimentConfig::RhDeriv($s) => $e,
            ExperimentConfig::StatDeriv($s) => $e,
            ExperimentConfig::LyapunovCheck($s) => $e,
            ExperimentConfig::Minorization($s) => $e,
            ExperimentConfig::McEstimate($s) => $e,
            ExperimentConfig::Gg1($s) => $e,
            ExperimentConfig::DeltaCi($s) => $e,
        }
    };
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Norm(_) => "norm",
            ExperimentConfig::RhSolve(_) => "rh-solve",
            ExperimentConfig::RhDeriv(_) => "rh-deriv",
            ExperimentConfig::StatDeriv(_) => "stat-deriv",
            ExperimentConfig::LyapunovCheck(_) => "lyapunov-check",
            ExperimentConfig::Minorization(_) => "minorization",
            ExperimentConfig::McEstimate(_) => "mc-estimate",
            ExperimentConfig::Gg1(_) => "gg1",
            ExperimentConfig::DeltaCi(_) => "delta-ci",
        }
    }

    pub fn seed(&self) -> u64 {
        each_spec!(self, s => s.seed)
    }

    pub fn set_seed(&mut self, seed: u64) {
        each_spec!(self, s => s.seed = seed)
    }

    pub fn out_dir(&self) -> Option<&Path> {
        each_spec!(self, s => s.out_dir.as_deref())
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        each_spec!(self, s => s.out_dir = Some(dir))
    }

    pub fn model(&self) -> Option<&ModelSpec> {
        each_spec!(self, s => s.model.as_ref())
    }
}

fn default_radius() -> f64 {
    0.1
}

/// A parameterized finite chain, or the continuous-state queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    TwoState {
        q: f64,
        theta0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    GeometricExit {
        theta0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    SymmetricTwoState {
        theta0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    /// A fixed kernel; entries may be signed for `norm`.
    Kernel {
        kernel: Vec<Vec<f64>>,
    },
    Scalar {
        kernel: Vec<Vec<f64>>,
        theta0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    ExponentialTilt {
        kernel: Vec<Vec<f64>>,
        tilt: Vec<Vec<f64>>,
        theta0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    SoftmaxTilt {
        weights: Vec<Vec<f64>>,
        tilt: Vec<Vec<f64>>,
        theta0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    Tabulated {
        thetas: Vec<f64>,
        kernels: Vec<Vec<Vec<f64>>>,
        theta0: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    ParetoGrid(ParetoGridSpec),
    Gg1(GG1Model),
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Schema(format!("{what} must be a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ModelSpec {
    pub fn is_gg1(&self) -> bool {
        matches!(self, ModelSpec::Gg1(_))
    }

    pub fn family(&self) -> Result<ParamKernelFamily, CliError> {
        let fam = match self {
            ModelSpec::TwoState { q, theta0, radius } => builtin::two_state(*q, *theta0, *radius)?,
            ModelSpec::GeometricExit { theta0, radius } => builtin::geometric_exit(*theta0, *radius)?,
            ModelSpec::SymmetricTwoState { theta0, radius } => builtin::symmetric_two_state(*theta0, *radius)?,
            ModelSpec::Kernel { kernel } => builtin::constant(FiniteKernel::from_rows(kernel)?, 0.0, 1.0)?,
            ModelSpec::Scalar { kernel, theta0, radius } => {
                builtin::scalar(FiniteKernel::from_rows(kernel)?, *theta0, *radius)?
            }
            ModelSpec::ExponentialTilt {
                kernel,
                tilt,
                theta0,
                radius,
            } => builtin::exponential_tilt(
                FiniteKernel::from_rows(kernel)?,
                matrix(tilt, "tilt")?,
                *theta0,
                *radius,
            )?,
            ModelSpec::SoftmaxTilt {
                weights,
                tilt,
                theta0,
                radius,
            } => builtin::softmax_tilt(matrix(weights, "weights")?, matrix(tilt, "tilt")?, *theta0, *radius)?,
            ModelSpec::Tabulated {
                thetas,
                kernels,
                theta0,
                radius,
            } => {
                let ks = kernels
                    .iter()
                    .map(|k| matrix(k, "tabulated kernel"))
                    .collect::<Result<Vec<_>, _>>()?;
                builtin::tabulated(thetas, &ks, *theta0, *radius)?
            }
            ModelSpec::ParetoGrid(spec) => builtin::pareto_lindley_grid(spec)?,
            ModelSpec::Gg1(_) => {
                return Err(CliError::Schema(
                    "the gg1 model is a continuous-state recursion, not a finite family".into(),
                ))
            }
        };
        Ok(fam)
    }

    /// The kernel for `norm`: signed entries are kept as given.
    pub fn kernel(&self) -> Result<FiniteKernel, CliError> {
        match self {
            ModelSpec::Kernel { kernel } => Ok(FiniteKernel::from_rows(kernel)?),
            other => Ok(other.family()?.base().clone()),
        }
    }
}

fn default_m_max() -> usize {
    lyapsens_core::kernel_algebra::DEFAULT_M_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormParams {
    /// Weight function; constant one when absent.
    #[serde(default)]
    pub weight: Option<Vec<f64>>,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
}

fn default_order() -> usize {
    1
}

/// Shared by `rh-solve` (value only) and `rh-deriv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhParams {
    pub interior: Vec<usize>,
    pub reward: Vec<f64>,
    #[serde(default)]
    pub discount: Option<Vec<f64>>,
    #[serde(default)]
    pub weight: Option<Vec<f64>>,
    /// Parameter value for `rh-solve`; `theta0` when absent.
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
    /// Number of band points for the value and derivative sweeps (0 disables them).
    #[serde(default)]
    pub sweep_points: usize,
    /// State whose value is swept; the first interior state when absent.
    #[serde(default)]
    pub sweep_state: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatParams {
    pub reward: Vec<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub sweep_points: usize,
}

fn default_grid_points() -> usize {
    21
}

fn default_envelope_grid() -> usize {
    33
}

fn default_inflate() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LyapunovParams {
    /// `v` lists `v_0, .., v_n` on the interior states; a heuristic certificate
    /// of order `order` is proposed when it is absent.
    RandomHorizon {
        interior: Vec<usize>,
        reward: Vec<f64>,
        #[serde(default)]
        discount: Option<Vec<f64>>,
        #[serde(default)]
        v: Option<Vec<Vec<f64>>>,
        eps: f64,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_inflate")]
        inflate: f64,
        #[serde(default)]
        weight: Option<Vec<f64>>,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
        #[serde(default = "default_envelope_grid")]
        envelope_grid: usize,
    },
    /// Sub-geometric drift pair with `kappa(s) = s^kappa_rho`.
    Stationary {
        q: Vec<f64>,
        v0: Vec<f64>,
        v1: Vec<f64>,
        kappa_rho: f64,
        small_set: Vec<usize>,
        c0: f64,
        c1: f64,
        eps: f64,
        #[serde(default)]
        reward: Option<Vec<f64>>,
        #[serde(default)]
        boundary: Option<Vec<usize>>,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
        #[serde(default = "default_envelope_grid")]
        envelope_grid: usize,
    },
    /// `P(theta) w <= r w + c 1_A` on the band grid.
    Geometric {
        weight: Vec<f64>,
        r: f64,
        c: f64,
        small_set: Vec<usize>,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
    },
}

fn default_power_max() -> usize {
    10
}

fn default_theta_points() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinorizationParams {
    pub small_set: Vec<usize>,
    #[serde(default = "default_power_max")]
    pub power_max: usize,
    #[serde(default = "default_theta_points")]
    pub theta_points: usize,
}

fn default_true() -> bool {
    true
}

fn default_warmup() -> usize {
    50
}

/// Monte Carlo estimators. For finite families the chain is embedded as a
/// recursion with one uniform draw per row; for the queue the reward is `w^p`
/// and the regeneration state is the empty queue, so `reward` and `regen` must
/// be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum McParams {
    UStar {
        interior: Vec<usize>,
        reward: Vec<f64>,
        #[serde(default)]
        discount: Option<Vec<f64>>,
        x0: usize,
        n_paths: usize,
        /// Path counts for an SE-vs-budget table.
        #[serde(default)]
        budgets: Vec<usize>,
        #[serde(default)]
        dump_samples: bool,
        #[serde(default = "default_true")]
        compare_exact: bool,
        #[serde(default = "default_envelope_grid")]
        envelope_grid: usize,
    },
    UStarDerivative {
        interior: Vec<usize>,
        reward: Vec<f64>,
        #[serde(default)]
        discount: Option<Vec<f64>>,
        x0: usize,
        n_paths: usize,
        #[serde(default)]
        budgets: Vec<usize>,
        #[serde(default)]
        dump_samples: bool,
        #[serde(default = "default_true")]
        compare_exact: bool,
        #[serde(default = "default_envelope_grid")]
        envelope_grid: usize,
    },
    PiF {
        #[serde(default)]
        reward: Option<Vec<f64>>,
        #[serde(default)]
        regen: Option<usize>,
        n_cycles: usize,
        #[serde(default = "default_true")]
        compare_exact: bool,
    },
    Gamma {
        #[serde(default)]
        reward: Option<Vec<f64>>,
        #[serde(default)]
        regen: Option<usize>,
        x: f64,
        n_cycles: usize,
        n_pi_cycles: usize,
        #[serde(default = "default_true")]
        compare_exact: bool,
    },
    StationaryDerivative {
        #[serde(default)]
        reward: Option<Vec<f64>>,
        #[serde(default)]
        regen: Option<usize>,
        n_outer: usize,
        n_cycles: usize,
        #[serde(default = "default_warmup")]
        warmup: usize,
        #[serde(default)]
        budgets: Vec<usize>,
        #[serde(default = "default_true")]
        compare_exact: bool,
        #[serde(default = "default_envelope_grid")]
        envelope_grid: usize,
    },
}

fn default_r() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Gg1Params {
    Derivative {
        #[serde(default)]
        budget: GG1Budget,
    },
    SeBudget {
        #[serde(default)]
        budget: GG1Budget,
        n_outer: Vec<usize>,
    },
    Probe(ProbeConfig),
    /// Drift certificate check; `constants` default to the recipe with exponent `r`.
    Drift {
        #[serde(default)]
        constants: Option<DriftConstants>,
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default)]
        grid: DriftGrid,
    },
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaCiParams {
    pub alpha_hat: f64,
    pub grad_hat: f64,
    pub c_hat: f64,
    pub n: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}
