//! Stationary distributions, Poisson's equation and derivatives of stationary
//! expectations on finite chains, with the drift and minorization checks that
//! justify them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, LU};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::kernel_algebra::{FiniteFunction, FiniteKernel, FiniteMeasure, StateSubset, WeightFunction, STOCHASTIC_TOL};
use crate::param_family::ParamKernelFamily;
use crate::random_horizon::{binomial, SLACK_TOL};

pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-12;
pub const POISSON_RESIDUAL_TOL: f64 = 1e-10;

fn nonneg(slack: f64, scale: f64) -> bool {
    slack >= -SLACK_TOL * scale.abs().max(1.0)
}

/// Closed communicating classes of the transition graph, each sorted.
pub fn recurrent_classes(p: &FiniteKernel) -> Vec<Vec<usize>> {
    let n = p.size();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for x in 0..n {
        for y in 0..n {
            if p.get(x, y) > 0.0 {
                g.add_edge(nodes[x], nodes[y], ());
            }
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0; n];
    for (i, c) in sccs.iter().enumerate() {
        for v in c {
            comp[v.index()] = i;
        }
    }
    let mut classes: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(i, c)| {
            c.iter()
                .all(|v| (0..n).all(|y| p.get(v.index(), y) <= 0.0 || comp[y] == *i))
        })
        .map(|(_, c)| {
            let mut v: Vec<usize> = c.iter().map(|v| v.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    classes.sort();
    classes
}

fn require_stochastic(p: &FiniteKernel) -> Result<()> {
    if p.is_stochastic(STOCHASTIC_TOL) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "kernel is not stochastic (row sums {:?})",
            p.row_sums()
        )))
    }
}

/// `pi` with `pi P = pi`, `sum pi = 1`, from the balance equations with one
/// equation replaced by the normalization.
pub fn stationary_distribution(p: &FiniteKernel) -> Result<FiniteMeasure> {
    require_stochastic(p)?;
    let classes = recurrent_classes(p);
    if classes.len() != 1 {
        return Err(Error::Reducible { classes });
    }
    let n = p.size();
    let mut a = (DMatrix::identity(n, n) - p.entries()).transpose();
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = LU::new(a)
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("balance equations are singular".into()))?;
    let residual = (p.entries().tr_mul(&pi) - &pi).amax();
    if residual > STATIONARY_RESIDUAL_TOL || (pi.sum() - 1.0).abs() > STATIONARY_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "stationary residual {residual:e} exceeds {STATIONARY_RESIDUAL_TOL:e}"
        )));
    }
    Ok(FiniteMeasure::from_vector(pi))
}

/// `P`, `pi` and a factorization of `Z^{-1} = I - P + Pi`.
#[derive(Debug, Clone)]
pub struct StationarySolver {
    p: DMatrix<f64>,
    pi: DVector<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl StationarySolver {
    pub fn new(p: &FiniteKernel) -> Result<Self> {
        let pi = stationary_distribution(p)?;
        Self::with_distribution(p, &pi)
    }

    pub fn with_distribution(p: &FiniteKernel, pi: &FiniteMeasure) -> Result<Self> {
        let n = p.size();
        check_dim("stationary distribution", n, pi.len())?;
        let pi = pi.values().clone();
        let a = DMatrix::identity(n, n) - p.entries() + DVector::from_element(n, 1.0) * pi.transpose();
        let lu = LU::new(a.clone());
        if !lu.is_invertible() {
            return Err(Error::Numerical("I - P + Pi is singular".into()));
        }
        Ok(Self {
            p: p.entries().clone(),
            pi,
            lu,
            lu_t: LU::new(a.transpose()),
        })
    }

    pub fn pi(&self) -> FiniteMeasure {
        FiniteMeasure::from_vector(self.pi.clone())
    }

    /// `pi f`.
    pub fn mean(&self, f: &FiniteFunction) -> f64 {
        self.pi.dot(f.values())
    }

    /// `Gamma f`: the solution of `g - P g = f - pi f` with `pi g = 0`.
    pub fn poisson(&self, f: &FiniteFunction) -> Result<FiniteFunction> {
        check_dim("poisson f", self.pi.len(), f.len())?;
        let fc = f.values().add_scalar(-self.mean(f));
        let g = self
            .lu
            .solve(&fc)
            .ok_or_else(|| Error::Numerical("solve against I - P + Pi failed".into()))?;
        let residual = (&g - &self.p * &g - &fc).amax();
        let scale = f.max_abs().max(1.0);
        if residual > POISSON_RESIDUAL_TOL * scale || self.pi.dot(&g).abs() > POISSON_RESIDUAL_TOL * scale {
            return Err(Error::Numerical(format!(
                "Poisson residual {residual:e} or normalization {:e} exceeds {POISSON_RESIDUAL_TOL:e}",
                self.pi.dot(&g)
            )));
        }
        Ok(FiniteFunction::from_vector(g))
    }

    /// `eta (I - P + Pi)^{-1}` for a row vector `eta`.
    pub fn apply_left(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu_t
            .solve(eta)
            .ok_or_else(|| Error::Numerical("solve against (I - P + Pi)^T failed".into()))
    }
}

/// `Gamma f` for the chain `P` with stationary distribution `pi`.
pub fn poisson_solve(p: &FiniteKernel, pi: &FiniteMeasure, f: &FiniteFunction) -> Result<FiniteFunction> {
    StationarySolver::with_distribution(p, pi)?.poisson(f)
}

fn family_solver(family: &ParamKernelFamily) -> Result<StationarySolver> {
    StationarySolver::new(family.base())
}

/// `pi^(j)(theta0)` for `j = 0..=n`, from
/// `pi^(n) = sum_{j<n} binom(n, j) pi^(j) P^(n-j) (I - P + Pi)^{-1}`.
pub fn higher_stationary_derivatives(family: &ParamKernelFamily, n: usize) -> Result<Vec<FiniteMeasure>> {
    if n > family.max_order() {
        return Err(Error::MissingHigherScores {
            requested: n,
            available: family.max_order(),
        });
    }
    let solver = family_solver(family)?;
    let t0 = family.theta0();
    let pd: Vec<DMatrix<f64>> = (1..=n)
        .map(|j| Ok(family.derivative_kernel(j, t0)?.into_entries()))
        .collect::<Result<_>>()?;
    let mut out: Vec<DVector<f64>> = vec![solver.pi.clone()];
    for m in 1..=n {
        let mut rhs = DVector::zeros(family.size());
        for j in 0..m {
            rhs += pd[m - j - 1].tr_mul(&out[j]) * binomial(m, j);
        }
        out.push(solver.apply_left(&rhs)?);
    }
    Ok(out.into_iter().map(FiniteMeasure::from_vector).collect())
}

/// `pi'(theta0) = pi P' (I - P + Pi)^{-1}`.
pub fn stationary_measure_derivative(family: &ParamKernelFamily) -> Result<FiniteMeasure> {
    Ok(higher_stationary_derivatives(family, 1)?.swap_remove(1))
}

/// `alpha'(theta0) = pi P' Gamma f` for `alpha(theta) = pi(theta) f`.
pub fn stationary_functional_derivative(family: &ParamKernelFamily, f: &FiniteFunction) -> Result<f64> {
    Ok(stationary_derivative_report(family, f)?.via_poisson)
}

/// Both routes to `alpha'(theta0)` and their discrepancy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDerivativeReport {
    pub alpha: f64,
    /// `pi P' Gamma f`.
    pub via_poisson: f64,
    /// `pi' f` with `pi' = pi P' (I - P + Pi)^{-1}`.
    pub via_measure: f64,
    pub discrepancy: f64,
    pub gamma_f: Vec<f64>,
    pub pi: Vec<f64>,
    pub pi_prime: Vec<f64>,
}

pub fn stationary_derivative_report(
    family: &ParamKernelFamily,
    f: &FiniteFunction,
) -> Result<StationaryDerivativeReport> {
    check_dim("stationary f", family.size(), f.len())?;
    let solver = family_solver(family)?;
    let pprime = family.score_kernel()?.into_entries();
    let g = solver.poisson(f)?;
    let via_poisson = solver.pi.dot(&(&pprime * g.values()));
    let pi_prime = solver.apply_left(&pprime.tr_mul(&solver.pi))?;
    let via_measure = pi_prime.dot(f.values());
    Ok(StationaryDerivativeReport {
        alpha: solver.mean(f),
        via_poisson,
        via_measure,
        discrepancy: (via_poisson - via_measure).abs(),
        gamma_f: g.as_slice().to_vec(),
        pi: solver.pi.iter().copied().collect(),
        pi_prime: pi_prime.iter().copied().collect(),
    })
}

/// `P^n(theta, x, .) >= lambda phi` for `x in A` and every grid `theta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorizationCertificate {
    pub power: usize,
    pub lambda: f64,
    pub phi: Vec<f64>,
}

impl MinorizationCertificate {
    pub fn new(power: usize, lambda: f64, phi: Vec<f64>) -> Result<Self> {
        if power == 0 || !(lambda > 0.0 && lambda <= 1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "minorization needs power >= 1 and lambda in (0, 1], got {power}, {lambda}"
            )));
        }
        if phi.iter().any(|v| *v < 0.0) || (phi.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("minorizing measure must be a probability".into()));
        }
        Ok(Self { power, lambda, phi })
    }
}

/// First `n <= power_max` whose columnwise minimum `m(y) = min_{x in A, theta} P^n(theta, x, y)`
/// has positive mass; `lambda = sum m`, `phi = m / lambda`. `None` is inconclusive.
pub fn check_minorization(
    family: &ParamKernelFamily,
    small_set: &StateSubset,
    power_max: usize,
    thetas: &[f64],
) -> Result<Option<MinorizationCertificate>> {
    let n = family.size();
    check_dim("small set universe", n, small_set.universe())?;
    if small_set.is_empty() {
        return Ok(None);
    }
    let kernels: Vec<DMatrix<f64>> = if thetas.is_empty() {
        vec![family.base().entries().clone()]
    } else {
        thetas
            .iter()
            .map(|t| Ok(family.eval_kernel(*t)?.into_entries()))
            .collect::<Result<_>>()?
    };
    let mut powers = kernels.clone();
    for power in 1..=power_max {
        if power > 1 {
            for (pw, k) in powers.iter_mut().zip(&kernels) {
                *pw = &*pw * k;
            }
        }
        let m: Vec<f64> = (0..n)
            .map(|y| {
                powers
                    .iter()
                    .flat_map(|pw| small_set.indices().iter().map(move |&x| pw[(x, y)]))
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0)
            })
            .collect();
        let lambda: f64 = m.iter().sum();
        if lambda > 0.0 {
            let phi = m.iter().map(|v| v / lambda).collect();
            return Ok(Some(MinorizationCertificate::new(power, lambda.min(1.0), phi)?));
        }
    }
    Ok(None)
}

/// `P w <= r w + c I_A` with `r < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricDriftCertificate {
    pub w: WeightFunction,
    pub r: f64,
    pub c: f64,
    pub small_set: StateSubset,
}

impl GeometricDriftCertificate {
    pub fn new(w: WeightFunction, r: f64, c: f64, small_set: StateSubset) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) || !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "geometric drift needs r in (0, 1) and c >= 0, got r = {r}, c = {c}"
            )));
        }
        check_dim("small set universe", w.len(), small_set.universe())?;
        Ok(Self { w, r, c, small_set })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometricDriftReport {
    /// `r w(x) + c I(x in A) - (P w)(x)`.
    pub slack: Vec<f64>,
    pub min_slack: f64,
    pub passed: bool,
}

pub fn check_geometric_drift(p: &FiniteKernel, cert: &GeometricDriftCertificate) -> Result<GeometricDriftReport> {
    check_dim("geometric drift weight", p.size(), cert.w.len())?;
    let w = cert.w.values();
    let pw = p.entries() * w;
    let mask = cert.small_set.mask();
    let slack: Vec<f64> = (0..p.size())
        .map(|x| cert.r * w[x] + if mask[x] { cert.c } else { 0.0 } - pw[x])
        .collect();
    Ok(GeometricDriftReport {
        min_slack: slack.iter().copied().fold(f64::INFINITY, f64::min),
        passed: slack.iter().zip(w.iter()).all(|(s, w)| nonneg(*s, *w)),
        slack,
    })
}

/// The growth function in the second drift inequality.
#[derive(Clone)]
pub struct Kappa {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Kappa {
    /// `kappa(s) = s^rho`, `rho > 1`.
    pub fn power(rho: f64) -> Self {
        Self {
            name: format!("s^{rho}"),
            f: Arc::new(move |s| s.powf(rho)),
        }
    }

    pub fn custom(name: impl Into<String>, f: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> Self {
        Self { name: name.into(), f }
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kappa({})", self.name)
    }
}

/// Functions and constants for the sub-geometric drift pair.
#[derive(Debug, Clone)]
pub struct StationaryCertificate {
    pub q: FiniteFunction,
    pub v0: FiniteFunction,
    pub v1: FiniteFunction,
    pub kappa: Kappa,
    pub small_set: StateSubset,
    pub c0: f64,
    pub c1: f64,
    pub eps: f64,
}

impl StationaryCertificate {
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, f) in [("q", &self.q), ("v0", &self.v0), ("v1", &self.v1)] {
            check_dim("certificate function", n, f.len())?;
            if f.as_slice().iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be nonnegative and finite")));
            }
        }
        check_dim("small set universe", n, self.small_set.universe())?;
        if !(self.c0 > 0.0 && self.c1 > 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidInput("c0, c1 and eps must be positive".into()));
        }
        Ok(())
    }
}

/// `kappa(s) >= s` and `kappa(s)/s` nondecreasing on a log-spaced grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaCheck {
    pub range: (f64, f64),
    pub points: usize,
    pub dominates_identity: bool,
    pub ratio_nondecreasing: bool,
    /// `kappa(s)/s` at the top of the range.
    pub ratio_at_top: f64,
}

pub fn check_kappa(kappa: &Kappa, lo: f64, hi: f64, points: usize) -> KappaCheck {
    let lo = lo.max(1.0);
    let hi = hi.max(lo);
    let points = points.max(2);
    let grid: Vec<f64> = (0..points)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (points - 1) as f64).exp())
        .collect();
    let ratios: Vec<f64> = grid.iter().map(|s| kappa.eval(*s) / s).collect();
    KappaCheck {
        range: (lo, hi),
        points,
        dominates_identity: ratios.iter().all(|r| *r >= 1.0 - 1e-12),
        ratio_nondecreasing: ratios.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)),
        ratio_at_top: *ratios.last().unwrap(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgeometricDriftReport {
    pub thetas: Vec<f64>,
    /// `v0 - (q v 1) + c0 I_A - P(theta) v0`, per grid `theta` and state.
    pub slack_v0: Vec<Vec<f64>>,
    /// `v1 - kappa(int (1 v omega)(v0 + 1) dP(theta)) + c1 I_A - P(theta) v1`.
    pub slack_v1: Vec<Vec<f64>>,
    pub min_slack_v0: f64,
    pub min_slack_v1: f64,
    /// States excluded from the pass decision because truncation altered their rows.
    pub boundary_states: Vec<usize>,
    pub boundary_min_slack_v0: Option<f64>,
    pub boundary_min_slack_v1: Option<f64>,
    pub boundary_passed: Option<bool>,
    pub kappa: KappaCheck,
    pub sup_v0_on_small_set: f64,
    /// `pi(theta) q` per grid `theta`; `None` where no unique stationary law exists.
    pub pi_q: Vec<Option<f64>>,
    pub pi_q_bounded: bool,
    pub functional: Option<FunctionalBounds>,
    pub passed: bool,
}

/// Growth and derivative bounds implied for a particular `f`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalBounds {
    /// `|f| <= q v 1` everywhere.
    pub f_admissible: bool,
    /// `max_x |Gamma f(x)| / (v0(x) + 1)`.
    pub a: f64,
    pub alpha_prime: f64,
    pub bound: f64,
    pub bound_holds: bool,
}

/// Check both sub-geometric drift inequalities on the `theta` grid.
///
/// `boundary` lists states whose rows were modified by truncation; their slacks
/// are reported separately and do not enter `passed`.
pub fn check_subgeometric_drift(
    family: &ParamKernelFamily,
    cert: &StationaryCertificate,
    thetas: &[f64],
    envelope_grid: usize,
    boundary: Option<&StateSubset>,
    f: Option<&FiniteFunction>,
) -> Result<SubgeometricDriftReport> {
    let n = family.size();
    cert.validate(n)?;
    if cert.eps > family.radius() * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "certificate radius {} exceeds the family radius {}",
            cert.eps,
            family.radius()
        )));
    }
    let omega = family.envelope(1, envelope_grid)?.values;
    let in_a = cert.small_set.mask();
    let is_bd = boundary.map(|b| b.mask()).unwrap_or_else(|| vec![false; n]);
    let (v0, v1, q) = (cert.v0.values(), cert.v1.values(), cert.q.values());
    let v0p1 = v0.add_scalar(1.0);
    let omega1 = omega.map(|v| v.max(1.0));

    let mut slack_v0 = Vec::with_capacity(thetas.len());
    let mut slack_v1 = Vec::with_capacity(thetas.len());
    let mut pi_q = Vec::with_capacity(thetas.len());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &t in thetas {
        let p = family.eval_kernel(t)?;
        let pm = p.entries();
        let pv0 = pm * v0;
        let pv1 = pm * v1;
        let inner = omega1.component_mul(pm) * &v0p1;
        let s0: Vec<f64> = (0..n)
            .map(|x| v0[x] - q[x].max(1.0) + if in_a[x] { cert.c0 } else { 0.0 } - pv0[x])
            .collect();
        let s1: Vec<f64> = (0..n)
            .map(|x| {
                lo = lo.min(inner[x]);
                hi = hi.max(inner[x]);
                v1[x] - cert.kappa.eval(inner[x]) + if in_a[x] { cert.c1 } else { 0.0 } - pv1[x]
            })
            .collect();
        slack_v0.push(s0);
        slack_v1.push(s1);
        pi_q.push(stationary_distribution(&p).ok().map(|pi| pi.values().dot(q)));
    }

    let fold = |s: &[Vec<f64>], v: &DVector<f64>, bd: bool| -> (f64, bool) {
        let mut min = f64::INFINITY;
        let mut ok = true;
        for row in s {
            for x in (0..n).filter(|x| is_bd[*x] == bd) {
                min = min.min(row[x]);
                ok &= nonneg(row[x], v[x]);
            }
        }
        (min, ok)
    };
    let (min0, ok0) = fold(&slack_v0, v0, false);
    let (min1, ok1) = fold(&slack_v1, v1, false);
    let boundary_states: Vec<usize> = (0..n).filter(|x| is_bd[*x]).collect();
    let (bmin0, bmin1, bpass) = if boundary_states.is_empty() {
        (None, None, None)
    } else {
        let (a, oka) = fold(&slack_v0, v0, true);
        let (b, okb) = fold(&slack_v1, v1, true);
        (Some(a), Some(b), Some(oka && okb))
    };
    let kappa = check_kappa(&cert.kappa, lo, hi, 64);
    let pi_q_bounded = pi_q.iter().all(|v| v.is_some_and(|v| v <= cert.c0 * (1.0 + 1e-12)));
    let sup_v0_on_small_set = cert.small_set.indices().iter().map(|&x| v0[x]).fold(0.0, f64::max);

    let functional = match f {
        Some(f) => {
            check_dim("functional f", n, f.len())?;
            let report = stationary_derivative_report(family, f)?;
            let a = report
                .gamma_f
                .iter()
                .zip(v0p1.iter())
                .map(|(g, v)| g.abs() / v)
                .fold(0.0, f64::max);
            let bound = a * cert.c1;
            Some(FunctionalBounds {
                f_admissible: f.as_slice().iter().zip(q.iter()).all(|(f, q)| f.abs() <= q.max(1.0)),
                a,
                alpha_prime: report.via_poisson,
                bound,
                bound_holds: report.via_poisson.abs() <= bound * (1.0 + 1e-12),
            })
        }
        None => None,
    };
    Ok(SubgeometricDriftReport {
        thetas: thetas.to_vec(),
        min_slack_v0: min0,
        min_slack_v1: min1,
        slack_v0,
        slack_v1,
        boundary_states,
        boundary_min_slack_v0: bmin0,
        boundary_min_slack_v1: bmin1,
        boundary_passed: bpass,
        passed: ok0 && ok1 && kappa.dominates_identity && kappa.ratio_nondecreasing,
        kappa,
        sup_v0_on_small_set,
        pi_q,
        pi_q_bounded,
        functional,
    })
}
