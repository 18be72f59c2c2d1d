//! Parameterized kernel families `K(theta, x, dy) = k(theta, x, y) K(x, dy)`.
//!
//! A family is a nonnegative base kernel at `theta0` together with a density
//! field that equals one at `theta0` on the support of the base, and its
//! `theta`-derivatives ("scores") up to some order. Two representations are
//! supported:
//!
//! - a pointwise density `k(theta, x, y)` with derivatives `k^(j)(theta, x, y)`;
//! - a kernel path `theta -> P(theta)` with derivatives `P^(j)(theta)`, from which
//!   the density is `P(theta)(x, y) / P(theta0)(x, y)` on the support.
//!
//! Density and derivative callables must be pure and safe to call concurrently.
//! Supports that move with `theta` are rejected: the density is only defined
//! where the base kernel is positive.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel_algebra::{matrix_contraction_power, ContractionCheck, FiniteKernel, StateSubset, WeightFunction};
use crate::random_horizon::TargetProblem;

/// Default number of grid points for numerical envelopes and the density sign check.
pub const DEFAULT_ENVELOPE_GRID: usize = 65;

/// Tolerance for `k(theta0, x, y) = 1` on the support.
const BASE_POINT_TOL: f64 = 1e-12;

/// `k(theta, x, y)`.
pub type DensityFn = Arc<dyn Fn(f64, usize, usize) -> f64 + Send + Sync>;
/// `k^(j)(theta, x, y)` for `j >= 1`.
pub type DensityDerivativeFn = Arc<dyn Fn(usize, f64, usize, usize) -> f64 + Send + Sync>;
/// `theta -> P(theta)`.
pub type KernelPathFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
/// `(j, theta) -> P^(j)(theta)` for `j >= 1`.
pub type KernelPathDerivativeFn = Arc<dyn Fn(usize, f64) -> DMatrix<f64> + Send + Sync>;
/// Closed-form envelope `(j, x, y) -> sup_{|theta - theta0| < eps} |k^(j)(theta, x, y)|`.
pub type EnvelopeFn = Arc<dyn Fn(usize, usize, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Representation {
    Density {
        density: DensityFn,
        derivative: DensityDerivativeFn,
    },
    KernelPath {
        kernel: KernelPathFn,
        derivative: KernelPathDerivativeFn,
    },
}

/// A scalar-parameter family of kernels, absolutely continuous with respect to its base.
#[derive(Clone)]
pub struct ParamKernelFamily {
    name: String,
    base: FiniteKernel,
    theta0: f64,
    radius: f64,
    interval: (f64, f64),
    max_order: usize,
    repr: Representation,
    envelope_override: Option<EnvelopeFn>,
}

impl fmt::Debug for ParamKernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamKernelFamily")
            .field("name", &self.name)
            .field("size", &self.base.size())
            .field("theta0", &self.theta0)
            .field("radius", &self.radius)
            .field("interval", &self.interval)
            .field("max_order", &self.max_order)
            .finish()
    }
}

/// Shared parameters of a family: base point, band radius and admissible interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyDomain {
    pub theta0: f64,
    pub radius: f64,
    pub interval: (f64, f64),
}

impl FamilyDomain {
    pub fn new(theta0: f64, radius: f64, interval: (f64, f64)) -> Result<Self> {
        let (a, b) = interval;
        if !(theta0.is_finite() && radius.is_finite()) || radius <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "need finite theta0 and radius > 0, got theta0 = {theta0}, radius = {radius}"
            )));
        }
        if !(a < theta0 - radius && theta0 + radius < b) {
            return Err(Error::InvalidInput(format!(
                "band [{}, {}] is not inside the open interval ({a}, {b})",
                theta0 - radius,
                theta0 + radius
            )));
        }
        Ok(Self {
            theta0,
            radius,
            interval,
        })
    }
}

impl ParamKernelFamily {
    /// Family from a pointwise density and its derivatives up to `max_order`.
    pub fn from_density(
        name: impl Into<String>,
        base: FiniteKernel,
        domain: FamilyDomain,
        max_order: usize,
        density: DensityFn,
        derivative: DensityDerivativeFn,
    ) -> Result<Self> {
        Self::build(
            name.into(),
            base,
            domain,
            max_order,
            Representation::Density { density, derivative },
        )
    }

    /// Family from a kernel path; the base is `P(theta0)`.
    pub fn from_kernel_path(
        name: impl Into<String>,
        domain: FamilyDomain,
        max_order: usize,
        kernel: KernelPathFn,
        derivative: KernelPathDerivativeFn,
    ) -> Result<Self> {
        let base = FiniteKernel::nonnegative(kernel(domain.theta0))
            .map_err(|e| Error::Model(format!("kernel at theta0: {e}")))?;
        Self::build(
            name.into(),
            base,
            domain,
            max_order,
            Representation::KernelPath { kernel, derivative },
        )
    }

    fn build(
        name: String,
        base: FiniteKernel,
        domain: FamilyDomain,
        max_order: usize,
        repr: Representation,
    ) -> Result<Self> {
        if base.is_signed() {
            return Err(Error::Model("base kernel must be nonnegative".into()));
        }
        let family = Self {
            name,
            base,
            theta0: domain.theta0,
            radius: domain.radius,
            interval: domain.interval,
            max_order,
            repr,
            envelope_override: None,
        };
        family.validate()?;
        Ok(family)
    }

    fn validate(&self) -> Result<()> {
        let n = self.size();
        let k0 = self.density_matrix(self.theta0)?;
        for x in 0..n {
            for y in 0..n {
                if self.base.get(x, y) > 0.0 && (k0[(x, y)] - 1.0).abs() > BASE_POINT_TOL {
                    return Err(Error::Model(format!(
                        "density at theta0 must be 1 on the support, found k(theta0, {x}, {y}) = {}",
                        k0[(x, y)]
                    )));
                }
            }
        }
        for theta in self.grid(DEFAULT_ENVELOPE_GRID) {
            let k = self.density_matrix(theta)?;
            for x in 0..n {
                for y in 0..n {
                    if self.base.get(x, y) > 0.0 {
                        let v = k[(x, y)];
                        if !v.is_finite() || v < 0.0 {
                            return Err(Error::Model(format!(
                                "density k({theta}, {x}, {y}) = {v} is not a nonnegative finite number"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Attach a closed-form envelope that overrides the numerical grid maximum.
    pub fn with_envelope(mut self, envelope: EnvelopeFn) -> Self {
        self.envelope_override = Some(envelope);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.base.size()
    }

    pub fn base(&self) -> &FiniteKernel {
        &self.base
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn domain(&self) -> FamilyDomain {
        FamilyDomain {
            theta0: self.theta0,
            radius: self.radius,
            interval: self.interval,
        }
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// `points` equally spaced values on `[theta0 - eps, theta0 + eps]`.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        theta_grid(self.theta0, self.radius, points)
    }

    fn check_theta(&self, theta: f64) -> Result<()> {
        let (a, b) = self.interval;
        if theta.is_finite() && a < theta && theta < b {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "theta = {theta} outside the parameter interval ({a}, {b})"
            )))
        }
    }

    fn check_order(&self, order: usize) -> Result<()> {
        if order > self.max_order {
            Err(Error::MissingHigherScores {
                requested: order,
                available: self.max_order,
            })
        } else {
            Ok(())
        }
    }

    /// `k^(order)(theta, ., .)` as a matrix, zero off the support.
    fn density_derivative_matrix(&self, order: usize, theta: f64) -> Result<DMatrix<f64>> {
        let n = self.size();
        let base = self.base.entries();
        match &self.repr {
            Representation::Density { density, derivative } => Ok(DMatrix::from_fn(n, n, |x, y| {
                if base[(x, y)] > 0.0 {
                    if order == 0 {
                        density(theta, x, y)
                    } else {
                        derivative(order, theta, x, y)
                    }
                } else {
                    0.0
                }
            })),
            Representation::KernelPath { kernel, derivative } => {
                let m = if order == 0 {
                    kernel(theta)
                } else {
                    derivative(order, theta)
                };
                if m.shape() != (n, n) {
                    return Err(Error::Model(format!(
                        "kernel path returned a {:?} matrix, expected {n}x{n}",
                        m.shape()
                    )));
                }
                let mut out = DMatrix::zeros(n, n);
                for x in 0..n {
                    for y in 0..n {
                        let b = base[(x, y)];
                        if b > 0.0 {
                            out[(x, y)] = m[(x, y)] / b;
                        } else if m[(x, y)] != 0.0 {
                            return Err(Error::Model(format!(
                                "entry ({x}, {y}) of the order-{order} kernel at theta = {theta} is {} outside the support of the base kernel; theta-dependent supports are not supported",
                                m[(x, y)]
                            )));
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn density_matrix(&self, theta: f64) -> Result<DMatrix<f64>> {
        self.density_derivative_matrix(0, theta)
    }

    /// `k(theta, x, y)`.
    pub fn density(&self, theta: f64, x: usize, y: usize) -> Result<f64> {
        self.density_derivative(0, theta, x, y)
    }

    /// `k^(order)(theta, x, y)`; order 0 is the density itself.
    pub fn density_derivative(&self, order: usize, theta: f64, x: usize, y: usize) -> Result<f64> {
        self.check_order(order)?;
        if self.base.get(x, y) <= 0.0 {
            return Ok(0.0);
        }
        match &self.repr {
            Representation::Density { density, derivative } => Ok(if order == 0 {
                density(theta, x, y)
            } else {
                derivative(order, theta, x, y)
            }),
            Representation::KernelPath { .. } => Ok(self.density_derivative_matrix(order, theta)?[(x, y)]),
        }
    }

    /// `K(theta) = base * k(theta)` entrywise. Returns the base exactly at `theta0`.
    pub fn eval_kernel(&self, theta: f64) -> Result<FiniteKernel> {
        self.check_theta(theta)?;
        if theta == self.theta0 {
            return Ok(self.base.clone());
        }
        let k = self.density_matrix(theta)?;
        let m = self.base.entries().component_mul(&k);
        if let Some(v) = m.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::Model(format!(
                "kernel at theta = {theta} has entry {v}; densities must be nonnegative"
            )));
        }
        FiniteKernel::nonnegative(m)
    }

    /// `K^(order)(theta) = base * k^(order)(theta)`, a signed kernel for `order >= 1`.
    pub fn derivative_kernel(&self, order: usize, theta: f64) -> Result<FiniteKernel> {
        if order == 0 {
            return self.eval_kernel(theta);
        }
        self.check_order(order)?;
        self.check_theta(theta)?;
        let k = self.density_derivative_matrix(order, theta)?;
        FiniteKernel::signed(self.base.entries().component_mul(&k))
    }

    /// `K'(x, y) = k'(theta0, x, y) K(x, y)`.
    pub fn score_kernel(&self) -> Result<FiniteKernel> {
        self.derivative_kernel(1, self.theta0)
    }

    /// Envelope `sup_{|theta - theta0| <= eps} |k^(order)(theta, x, y)|` over the full
    /// state space: a closed form if one is attached, otherwise a maximum over a
    /// uniform grid of `grid_points` values.
    pub fn envelope(&self, order: usize, grid_points: usize) -> Result<EnvelopeMatrix> {
        self.check_order(order)?;
        let n = self.size();
        if let Some(env) = &self.envelope_override {
            let values = DMatrix::from_fn(n, n, |x, y| {
                if self.base.get(x, y) > 0.0 {
                    env(order, x, y)
                } else {
                    0.0
                }
            });
            return Ok(EnvelopeMatrix {
                order,
                values,
                grid_points: None,
            });
        }
        if grid_points < 3 {
            return Err(Error::InvalidInput(format!(
                "envelope grid needs at least 3 points, got {grid_points}"
            )));
        }
        let mut values = DMatrix::zeros(n, n);
        for theta in self.grid(grid_points) {
            let k = self.density_derivative_matrix(order, theta)?;
            for (acc, v) in values.iter_mut().zip(k.iter()) {
                if !v.is_finite() {
                    return Err(Error::Model(format!(
                        "non-finite order-{order} score at theta = {theta}"
                    )));
                }
                *acc = f64::max(*acc, v.abs());
            }
        }
        Ok(EnvelopeMatrix {
            order,
            values,
            grid_points: Some(grid_points),
        })
    }

    /// The same family re-based at `theta1`: base `K(theta1)`, density `k / k(theta1)`.
    pub fn recentered(&self, theta1: f64) -> Result<Self> {
        self.check_theta(theta1)?;
        let (a, b) = self.interval;
        let radius = self.radius.min(0.999 * (theta1 - a)).min(0.999 * (b - theta1));
        let domain = FamilyDomain::new(theta1, radius, self.interval)?;
        match &self.repr {
            Representation::KernelPath { kernel, derivative } => Self::from_kernel_path(
                format!("{}@{theta1}", self.name),
                domain,
                self.max_order,
                kernel.clone(),
                derivative.clone(),
            ),
            Representation::Density { density, derivative } => {
                let base = self.eval_kernel(theta1)?;
                let k1 = self.density_matrix(theta1)?;
                let orig_base = self.base.entries().clone();
                if (0..self.size())
                    .flat_map(|x| (0..self.size()).map(move |y| (x, y)))
                    .any(|(x, y)| orig_base[(x, y)] > 0.0 && k1[(x, y)] <= 0.0)
                {
                    return Err(Error::Model(format!(
                        "density vanishes at theta = {theta1} on the base support; cannot re-base"
                    )));
                }
                let k1 = Arc::new(k1);
                let (d, dd, k1a, k1b) = (density.clone(), derivative.clone(), k1.clone(), k1);
                Self::from_density(
                    format!("{}@{theta1}", self.name),
                    base,
                    domain,
                    self.max_order,
                    Arc::new(move |t, x, y| d(t, x, y) / k1a[(x, y)]),
                    Arc::new(move |j, t, x, y| dd(j, t, x, y) / k1b[(x, y)]),
                )
            }
        }
    }
}

/// `points` equally spaced values on `[center - radius, center + radius]`.
pub fn theta_grid(center: f64, radius: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![center],
        _ => (0..points)
            .map(|i| {
                // symmetric construction keeps the midpoint exactly at `center`
                let t = 2.0 * i as f64 / (points - 1) as f64 - 1.0;
                center + radius * t
            })
            .collect(),
    }
}

/// Entrywise upper bound on `|k^(order)|` over the parameter band.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeMatrix {
    pub order: usize,
    /// Full `S x S` envelope; zero off the base support.
    pub values: DMatrix<f64>,
    /// `None` for a closed-form envelope.
    pub grid_points: Option<usize>,
}

impl EnvelopeMatrix {
    /// `omega_eps` on `C x C`.
    pub fn interior(&self, c: &StateSubset) -> DMatrix<f64> {
        block(&self.values, c, c)
    }

    /// `omega~_eps` on `C x C^c`.
    pub fn boundary(&self, c: &StateSubset) -> DMatrix<f64> {
        block(&self.values, c, &c.complement())
    }
}

pub(crate) fn block(m: &DMatrix<f64>, rows: &StateSubset, cols: &StateSubset) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows.indices()[i], cols.indices()[j])])
}

/// Row sums of the score kernel, `sum_y k'(theta0, x, y) K(x, y)`.
///
/// For a stochastic family these vanish (differentiate the row sums of one).
/// Discounted kernels need not normalize, so a nonzero value is only a warning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMeanDiagnostic {
    pub row_sums: Vec<f64>,
    pub max_abs: f64,
    pub base_stochastic: bool,
    pub tolerance: f64,
    pub warning: bool,
}

pub fn score_mean_diagnostic(family: &ParamKernelFamily, tolerance: f64) -> Result<ScoreMeanDiagnostic> {
    let row_sums = family.score_kernel()?.row_sums();
    let max_abs = row_sums.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    Ok(ScoreMeanDiagnostic {
        max_abs,
        base_stochastic: family.base().is_stochastic(crate::kernel_algebra::STOCHASTIC_TOL),
        tolerance,
        warning: max_abs > tolerance,
        row_sums,
    })
}

/// Sufficient conditions for differentiability of a random-horizon expectation,
/// evaluated on the finite chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemarkConditionsReport {
    /// `|||K^m(theta0)|||_w < 1` for some `m`.
    pub contraction: ContractionCheck,
    pub contraction_holds: bool,
    /// Per order `j = 0..=n`: `max_x sum_{y in C} omega^(j)(x, y) w(y)/w(x) K(x, y)`.
    pub interior_envelope_sups: Vec<f64>,
    pub interior_holds: bool,
    /// Per order `j = 0..=n`: `max_x sum_{y in C^c} (1 + omega~^(j)(x, y)) |f(y)| / w(x) K(x, y)`.
    pub boundary_sups: Vec<f64>,
    pub boundary_holds: bool,
}

impl RemarkConditionsReport {
    pub fn all_hold(&self) -> bool {
        self.contraction_holds && self.interior_holds && self.boundary_holds
    }
}

/// Check the contraction, interior-envelope and boundary-envelope conditions that
/// together make `K(.)` and `f~(.)` differentiable in the weighted spaces.
///
/// `w` is a weight on the interior set `C` (a weight on all of `S` is restricted).
pub fn check_remark_conditions(
    problem: &TargetProblem,
    w: &WeightFunction,
    order: usize,
    grid_points: usize,
    m_max: usize,
) -> Result<RemarkConditionsReport> {
    let family = problem.family();
    let c = problem.interior();
    let w = problem.interior_weight(w)?;
    let wv = w.values();
    let k = problem.interior_kernel(family.theta0())?;
    let contraction = matrix_contraction_power(&k, wv, m_max);

    let kb = problem.boundary_kernel(family.theta0())?;
    let f_out: DVector<f64> = problem.reward().restrict(&c.complement()).into_vector();

    let mut interior_envelope_sups = Vec::with_capacity(order + 1);
    let mut boundary_sups = Vec::with_capacity(order + 1);
    for j in 0..=order {
        let env = family.envelope(j, grid_points)?;
        let om = env.interior(c);
        let om_b = env.boundary(c);
        let mut sup_i = 0.0_f64;
        let mut sup_b = 0.0_f64;
        for x in 0..c.len() {
            let si: f64 = (0..c.len()).map(|y| om[(x, y)] * wv[y] / wv[x] * k[(x, y)]).sum();
            let sb: f64 = (0..f_out.len())
                .map(|y| (1.0 + om_b[(x, y)]) * f_out[y].abs() / wv[x] * kb[(x, y)])
                .sum();
            sup_i = sup_i.max(si);
            sup_b = sup_b.max(sb);
        }
        interior_envelope_sups.push(sup_i);
        boundary_sups.push(sup_b);
    }
    Ok(RemarkConditionsReport {
        contraction_holds: contraction.passed(),
        contraction,
        interior_holds: interior_envelope_sups.iter().all(|v| v.is_finite()),
        interior_envelope_sups,
        boundary_holds: boundary_sups.iter().all(|v| v.is_finite()),
        boundary_sups,
    })
}

pub mod builtin;
