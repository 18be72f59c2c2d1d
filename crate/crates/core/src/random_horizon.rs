//! Random-horizon expectations `u*(theta, x) = E_x sum_{n < T} exp(sum_{j<n} g(X_j)) ...`
//! on a finite chain, where `T` is the first exit time from the interior set `C`.
//!
//! With `K(theta) = diag(exp g) P(theta)` restricted to `C x C` and
//! `f~(theta) = f|_C + diag(exp g) P(theta)_{C, C^c} f|_{C^c}`, the value is
//! `u* = (I - K)^{-1} f~` and all derivatives follow by solving against the same
//! factorization.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::kernel_algebra::{
    matrix_contraction_power, FiniteFunction, FiniteKernel, FiniteMeasure, Resolvent, StateSubset, WeightFunction,
    DEFAULT_M_MAX,
};
use crate::param_family::{block, theta_grid, ParamKernelFamily};

/// Default number of `theta` values used when checking certificates over the band.
pub const DEFAULT_CERT_GRID: usize = 21;

/// Slacks above `-SLACK_TOL * max(1, |v(x)|)` count as nonnegative.
pub const SLACK_TOL: f64 = 1e-12;

/// `binom(n, k)` as a float.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Chain family, interior set, reward and discount exponent.
#[derive(Debug, Clone)]
pub struct TargetProblem {
    family: ParamKernelFamily,
    interior: StateSubset,
    reward: FiniteFunction,
    discount: FiniteFunction,
    exp_g: DVector<f64>,
}

impl TargetProblem {
    pub fn new(
        family: ParamKernelFamily,
        interior: StateSubset,
        reward: FiniteFunction,
        discount: FiniteFunction,
    ) -> Result<Self> {
        let n = family.size();
        check_dim("interior set universe", n, interior.universe())?;
        check_dim("reward", n, reward.len())?;
        check_dim("discount exponent", n, discount.len())?;
        if interior.is_empty() {
            return Err(Error::InvalidInput("interior set C must be nonempty".into()));
        }
        let exp_g = DVector::from_iterator(
            interior.len(),
            interior.indices().iter().map(|&x| discount.as_slice()[x].exp()),
        );
        if exp_g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("exp(g) must be finite on C".into()));
        }
        Ok(Self {
            family,
            interior,
            reward,
            discount,
            exp_g,
        })
    }

    /// No discounting (`g = 0`).
    pub fn undiscounted(family: ParamKernelFamily, interior: StateSubset, reward: FiniteFunction) -> Result<Self> {
        let n = family.size();
        Self::new(family, interior, reward, FiniteFunction::zeros(n))
    }

    pub fn family(&self) -> &ParamKernelFamily {
        &self.family
    }

    pub fn interior(&self) -> &StateSubset {
        &self.interior
    }

    pub fn exterior(&self) -> StateSubset {
        self.interior.complement()
    }

    pub fn reward(&self) -> &FiniteFunction {
        &self.reward
    }

    pub fn discount(&self) -> &FiniteFunction {
        &self.discount
    }

    pub fn theta0(&self) -> f64 {
        self.family.theta0()
    }

    /// A weight on `C`; a weight given on all of `S` is restricted.
    pub fn interior_weight(&self, w: &WeightFunction) -> Result<WeightFunction> {
        if w.len() == self.interior.len() {
            Ok(w.clone())
        } else if w.len() == self.family.size() {
            Ok(w.restrict(&self.interior))
        } else {
            Err(Error::DimensionMismatch {
                context: "weight on C or S",
                expected: self.interior.len(),
                found: w.len(),
            })
        }
    }

    /// A function on `C`; a function given on all of `S` is restricted.
    fn interior_function(&self, v: &FiniteFunction) -> Result<DVector<f64>> {
        if v.len() == self.interior.len() {
            Ok(v.values().clone())
        } else if v.len() == self.family.size() {
            Ok(v.restrict(&self.interior).into_vector())
        } else {
            Err(Error::DimensionMismatch {
                context: "function on C or S",
                expected: self.interior.len(),
                found: v.len(),
            })
        }
    }

    fn scaled_block(&self, m: &DMatrix<f64>, cols: &StateSubset) -> DMatrix<f64> {
        let mut b = block(m, &self.interior, cols);
        for (i, mut row) in b.row_iter_mut().enumerate() {
            row *= self.exp_g[i];
        }
        b
    }

    /// `K^(order)(theta)` on `C x C`, discount included.
    pub fn interior_derivative(&self, order: usize, theta: f64) -> Result<DMatrix<f64>> {
        let p = self.family.derivative_kernel(order, theta)?;
        Ok(self.scaled_block(p.entries(), &self.interior))
    }

    /// `K^(order)(theta)` on `C x C^c`, discount included.
    pub fn boundary_derivative(&self, order: usize, theta: f64) -> Result<DMatrix<f64>> {
        let p = self.family.derivative_kernel(order, theta)?;
        Ok(self.scaled_block(p.entries(), &self.exterior()))
    }

    pub fn interior_kernel(&self, theta: f64) -> Result<DMatrix<f64>> {
        self.interior_derivative(0, theta)
    }

    pub fn boundary_kernel(&self, theta: f64) -> Result<DMatrix<f64>> {
        self.boundary_derivative(0, theta)
    }

    fn exterior_reward(&self) -> DVector<f64> {
        self.reward.restrict(&self.exterior()).into_vector()
    }

    /// `f~^(order)(theta)` on `C`; order 0 includes `f|_C`.
    pub fn tilde_f_derivative(&self, order: usize, theta: f64) -> Result<FiniteFunction> {
        let kb = self.boundary_derivative(order, theta)?;
        let mut v = kb * self.exterior_reward();
        if order == 0 {
            v += self.reward.restrict(&self.interior).values();
        }
        Ok(FiniteFunction::from_vector(v))
    }

    /// `f~(theta, x) = f(x) + sum_{y in C^c} exp(g(x)) P(theta, x, y) f(y)` for `x in C`.
    pub fn build_tilde_f(&self, theta: f64) -> Result<FiniteFunction> {
        self.tilde_f_derivative(0, theta)
    }

    /// Factorization of `I - K(theta)` after the contraction check in `w`.
    pub fn resolvent(&self, theta: f64, w: &WeightFunction) -> Result<Resolvent> {
        let w = self.interior_weight(w)?;
        Resolvent::from_matrix(self.interior_kernel(theta)?, w.values(), DEFAULT_M_MAX)
    }

    /// `u*(theta) = (I - K(theta))^{-1} f~(theta)` on `C`.
    pub fn compute_u_star(&self, theta: f64, w: &WeightFunction) -> Result<FiniteFunction> {
        let g = self.resolvent(theta, w)?;
        g.solve(&self.build_tilde_f(theta)?)
    }

    /// `u*^(l)(theta0)` for `l = 0..=n`, from
    /// `u*^(l) = G (f~^(l) + sum_{j<l} binom(l, j) K^(l-j) u*^(j))`.
    pub fn higher_derivatives(&self, w: &WeightFunction, n: usize) -> Result<Vec<FiniteFunction>> {
        if n > self.family.max_order() {
            return Err(Error::MissingHigherScores {
                requested: n,
                available: self.family.max_order(),
            });
        }
        let t0 = self.theta0();
        let g = self.resolvent(t0, w)?;
        let kd: Vec<DMatrix<f64>> = (1..=n)
            .map(|j| self.interior_derivative(j, t0))
            .collect::<Result<_>>()?;
        let mut out = vec![g.solve(&self.build_tilde_f(t0)?)?];
        for l in 1..=n {
            let mut rhs = self.tilde_f_derivative(l, t0)?.into_vector();
            for j in 0..l {
                rhs += (&kd[l - j - 1] * out[j].values()) * binomial(l, j);
            }
            out.push(FiniteFunction::from_vector(g.solve_vec(&rhs)?));
        }
        Ok(out)
    }

    /// `u*'(theta0) = G (K' u* + f~')` on `C`.
    pub fn derivative_u_star(&self, w: &WeightFunction) -> Result<FiniteFunction> {
        Ok(self.higher_derivatives(w, 1)?.swap_remove(1))
    }

    /// `nu(theta) = mu G(theta)` for a measure on `C`.
    pub fn occupation_measure(&self, theta: f64, mu: &FiniteMeasure, w: &WeightFunction) -> Result<FiniteMeasure> {
        check_dim("initial measure on C", self.interior.len(), mu.len())?;
        self.resolvent(theta, w)?.solve_left(mu)
    }

    /// `nu'(theta0) = mu' G + nu K' G` where `nu = mu G`.
    pub fn measure_derivative(
        &self,
        mu: &FiniteMeasure,
        mu_prime: &FiniteMeasure,
        w: &WeightFunction,
    ) -> Result<MeasureDerivative> {
        let c = self.interior.len();
        check_dim("initial measure on C", c, mu.len())?;
        check_dim("initial measure derivative on C", c, mu_prime.len())?;
        let t0 = self.theta0();
        let g = self.resolvent(t0, w)?;
        let kp = self.interior_derivative(1, t0)?;
        let nu = g.solve_left_vec(mu.values())?;
        let rhs = mu_prime.values() + kp.tr_mul(&nu);
        let nu_prime = g.solve_left_vec(&rhs)?;
        Ok(MeasureDerivative {
            nu: FiniteMeasure::from_vector(nu),
            nu_prime: FiniteMeasure::from_vector(nu_prime),
        })
    }

    /// Row `x` of the signed measure `nu'` on `S` with `u*'(theta0, x) = sum_y nu'(x, y) f(y)`.
    ///
    /// On `C` it is `(G K' G)(x, .)`; on `C^c` it is `(G K'_bd + G K' G K_bd)(x, .)`.
    /// The second boundary term carries the dependence of `f~` on exterior rewards
    /// through `u*`.
    pub fn signed_measure_representation(&self, w: &WeightFunction, x: usize) -> Result<FiniteMeasure> {
        let pos = self
            .interior
            .indices()
            .iter()
            .position(|&i| i == x)
            .ok_or_else(|| Error::InvalidInput(format!("state {x} is not in the interior set C")))?;
        let t0 = self.theta0();
        let g = self.resolvent(t0, w)?;
        let c = self.interior.len();
        let row_g = g.solve_left_vec(&DVector::from_fn(c, |i, _| if i == pos { 1.0 } else { 0.0 }))?;
        let kp = self.interior_derivative(1, t0)?;
        let kp_bd = self.boundary_derivative(1, t0)?;
        let kb = self.boundary_kernel(t0)?;
        let inner = g.solve_left_vec(&kp.tr_mul(&row_g))?;
        let outer = kp_bd.tr_mul(&row_g) + kb.tr_mul(&inner);
        let mut out = DVector::zeros(self.family.size());
        for (i, &s) in self.interior.indices().iter().enumerate() {
            out[s] = inner[i];
        }
        for (i, &s) in self.exterior().indices().iter().enumerate() {
            out[s] = outer[i];
        }
        Ok(FiniteMeasure::from_vector(out))
    }

    /// Check the drift inequalities of `cert` on a uniform grid of `grid_points`
    /// values of `theta` over `[theta0 - eps, theta0 + eps]`.
    ///
    /// Envelopes are taken over the family band, which must contain the
    /// certificate band. When `w` is given and `K(theta0)` contracts in it, the
    /// computed derivatives are compared with the certified bounds `|u*^(l)| <= v_l`.
    pub fn verify_lyapunov_rh(
        &self,
        cert: &LyapunovCertificateRH,
        grid_points: usize,
        envelope_grid: usize,
        w: Option<&WeightFunction>,
    ) -> Result<LyapunovReportRH> {
        if cert.eps > self.family.radius() * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "certificate radius {} exceeds the family radius {}",
                cert.eps,
                self.family.radius()
            )));
        }
        let n = cert.order();
        let c = self.interior.len();
        let v: Vec<DVector<f64>> = cert
            .v
            .iter()
            .map(|f| self.interior_function(f))
            .collect::<Result<_>>()?;
        let t0 = self.theta0();
        let thetas = theta_grid(t0, cert.eps, grid_points.max(1));
        let env: Vec<DMatrix<f64>> = (1..=n)
            .map(|j| Ok(self.family.envelope(j, envelope_grid)?.values))
            .collect::<Result<_>>()?;
        let om: Vec<DMatrix<f64>> = env.iter().map(|e| block(e, &self.interior, &self.interior)).collect();
        let om_b: Vec<DMatrix<f64>> = env.iter().map(|e| block(e, &self.interior, &self.exterior())).collect();
        let f_abs = self.exterior_reward().abs();

        let mut slacks: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(thetas.len()); n + 1];
        for &theta in &thetas {
            let k = self.interior_kernel(theta)?;
            let kb = self.boundary_kernel(theta)?;
            let ft = self.build_tilde_f(theta)?.into_vector();
            let s0 = &v[0] - &k * &v[0] - ft.abs();
            slacks[0].push(s0.iter().copied().collect());
            for l in 1..=n {
                let mut s = &v[l] - &k * &v[l];
                for j in 0..l {
                    s -= om[l - j - 1].component_mul(&k) * &v[j] * binomial(l, j);
                }
                s -= om_b[l - 1].component_mul(&kb) * &f_abs;
                slacks[l].push(s.iter().copied().collect());
            }
        }
        let mid = thetas.iter().position(|&t| t == t0).unwrap_or(thetas.len() / 2);
        let labels = self.interior.indices().to_vec();
        let inequalities: Vec<InequalityReport> = slacks
            .into_iter()
            .enumerate()
            .map(|(l, s)| InequalityReport::new(l, &thetas, s, &v[l], &labels))
            .collect();
        let holds_at_theta0 = inequalities
            .iter()
            .map(|r| {
                r.slack[mid]
                    .iter()
                    .zip(v[r.order].iter())
                    .all(|(s, vx)| nonneg(*s, *vx))
            })
            .collect();

        let k0 = self.interior_kernel(t0)?;
        let top_order_integral = if n >= 1 {
            (om[n - 1].component_mul(&k0) * &v[n]).iter().copied().collect()
        } else {
            vec![0.0; c]
        };

        let derivative_bounds = match w {
            Some(w) if n >= 1 && n <= self.family.max_order() => match self.higher_derivatives(w, n) {
                Ok(ds) => Some((1..=n).map(|l| BoundCheck::new(l, ds[l].values(), &v[l])).collect()),
                Err(e) if e.is_refusal() => None,
                Err(e) => return Err(e),
            },
            _ => None,
        };
        let passed = inequalities.iter().all(|r| r.holds);
        let differentiable = inequalities[0].holds && holds_at_theta0_all(&inequalities, mid, &v);
        Ok(LyapunovReportRH {
            theta0: t0,
            eps: cert.eps,
            theta_grid: thetas,
            inequalities,
            holds_at_theta0,
            differentiable_at_theta0: differentiable,
            top_order_integral,
            derivative_bounds,
            neighbourhood_note: format!(
                "band inequalities for orders >= 1 were checked on the certificate band [{}, {}] only; no other neighbourhood is inferred",
                t0 - cert.eps,
                t0 + cert.eps
            ),
            passed,
        })
    }

    /// Propose `v_0, .., v_n` that satisfy the band inequalities at every grid point.
    ///
    /// Uses the entrywise maximum `K_sup` of `K(theta)` over the grid and solves
    /// the inequalities with equality against it:
    /// `v_0 = G_sup max_theta |f~(theta)|`,
    /// `v_l = G_sup (sum_{j<l} binom(l, j) (omega^(l-j) o K_sup) v_j + (omega~^(l) o K_sup,bd) |f|)`,
    /// all scaled by `inflate >= 1`. Between grid points nothing is guaranteed,
    /// so the result is a heuristic starting point, not a proof.
    pub fn propose_certificate(
        &self,
        order: usize,
        eps: f64,
        grid_points: usize,
        envelope_grid: usize,
        inflate: f64,
    ) -> Result<ProposedCertificate> {
        if inflate < 1.0 {
            return Err(Error::InvalidInput(format!("inflate = {inflate} must be >= 1")));
        }
        let c = self.interior.len();
        let thetas = theta_grid(self.theta0(), eps, grid_points.max(1));
        let mut ksup = DMatrix::zeros(c, c);
        let mut kbsup = DMatrix::zeros(c, self.exterior().len());
        let mut fsup = DVector::zeros(c);
        for &t in &thetas {
            ksup = ksup.sup(&self.interior_kernel(t)?);
            kbsup = kbsup.sup(&self.boundary_kernel(t)?);
            fsup = fsup.sup(&self.build_tilde_f(t)?.into_vector().abs());
        }
        let g = Resolvent::from_matrix(ksup.clone(), &DVector::from_element(c, 1.0), DEFAULT_M_MAX).or_else(|_| {
            // fall back to a weight built from the row sums of the resolvent guess
            let ones = DVector::from_element(c, 1.0);
            let lu = (DMatrix::identity(c, c) - &ksup).lu();
            let w = lu
                .solve(&ones)
                .filter(|w| w.iter().all(|v| *v >= 1.0 && v.is_finite()))
                .ok_or_else(|| Error::Numerical("no contracting weight for the band-maximal kernel".into()))?;
            Resolvent::from_matrix(ksup.clone(), &w, DEFAULT_M_MAX)
        })?;
        let env: Vec<DMatrix<f64>> = (1..=order)
            .map(|j| Ok(self.family.envelope(j, envelope_grid)?.values))
            .collect::<Result<_>>()?;
        let f_abs = self.exterior_reward().abs();
        let mut v = vec![g.solve_vec(&fsup)?];
        for l in 1..=order {
            let om_b = block(&env[l - 1], &self.interior, &self.exterior());
            let mut rhs = om_b.component_mul(&kbsup) * &f_abs;
            for j in 0..l {
                let om_j = block(&env[l - j - 1], &self.interior, &self.interior);
                rhs += om_j.component_mul(&ksup) * &v[j] * binomial(l, j);
            }
            v.push(g.solve_vec(&rhs)?);
        }
        let v = v
            .into_iter()
            .map(|x| FiniteFunction::from_vector((x * inflate).map(|e| e.max(0.0))))
            .collect();
        Ok(ProposedCertificate {
            certificate: LyapunovCertificateRH::new(v, eps)?,
            heuristic: true,
        })
    }
}

fn nonneg(slack: f64, v: f64) -> bool {
    slack >= -SLACK_TOL * v.abs().max(1.0)
}

fn holds_at_theta0_all(reports: &[InequalityReport], mid: usize, v: &[DVector<f64>]) -> bool {
    reports.iter().skip(1).all(|r| {
        r.slack[mid]
            .iter()
            .zip(v[r.order].iter())
            .all(|(s, vx)| nonneg(*s, *vx))
    })
}

/// `nu = mu G` and its derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureDerivative {
    pub nu: FiniteMeasure,
    pub nu_prime: FiniteMeasure,
}

/// Lyapunov functions `v_0, .., v_n` on `C` and the band radius.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificateRH {
    pub v: Vec<FiniteFunction>,
    pub eps: f64,
}

impl LyapunovCertificateRH {
    pub fn new(v: Vec<FiniteFunction>, eps: f64) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidInput("certificate needs at least v_0".into()));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "certificate radius {eps} must be positive"
            )));
        }
        if v.iter()
            .any(|f| f.as_slice().iter().any(|x| *x < 0.0 || !x.is_finite()))
        {
            return Err(Error::InvalidInput(
                "Lyapunov functions must be nonnegative and finite".into(),
            ));
        }
        Ok(Self { v, eps })
    }

    pub fn order(&self) -> usize {
        self.v.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposedCertificate {
    pub certificate: LyapunovCertificateRH,
    /// Always true: the proposal is only checked on the grid it was built from.
    pub heuristic: bool,
}

/// Slack of one inequality per grid `theta` and per interior state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub label: String,
    pub order: usize,
    /// Indices in `S` of the interior states, in slack column order.
    pub states: Vec<usize>,
    pub thetas: Vec<f64>,
    pub slack: Vec<Vec<f64>>,
    pub min_slack: f64,
    pub worst_theta: f64,
    pub worst_state: usize,
    pub holds: bool,
}

impl InequalityReport {
    fn new(order: usize, thetas: &[f64], slack: Vec<Vec<f64>>, v: &DVector<f64>, states: &[usize]) -> Self {
        let mut min_slack = f64::INFINITY;
        let (mut worst_theta, mut worst_state) = (thetas[0], states[0]);
        let mut holds = true;
        for (t, row) in thetas.iter().zip(&slack) {
            for (i, s) in row.iter().enumerate() {
                if *s < min_slack || s.is_nan() {
                    min_slack = *s;
                    worst_theta = *t;
                    worst_state = states[i];
                }
                holds &= nonneg(*s, v[i]);
            }
        }
        let label = if order == 0 {
            "[rh-lyapunov] K(theta) v0 <= v0 - |f~(theta)|".to_string()
        } else {
            format!("[rh-lyapunov] order-{order} inequality for v{order}")
        };
        Self {
            label,
            order,
            states: states.to_vec(),
            thetas: thetas.to_vec(),
            slack,
            min_slack,
            worst_theta,
            worst_state,
            holds,
        }
    }
}

/// `|u*^(l)(theta0)| <= v_l` on `C`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub order: usize,
    pub derivative: Vec<f64>,
    pub bound: Vec<f64>,
    pub min_slack: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(order: usize, d: &DVector<f64>, v: &DVector<f64>) -> Self {
        let slack: Vec<f64> = d.iter().zip(v.iter()).map(|(d, v)| v - d.abs()).collect();
        Self {
            order,
            derivative: d.iter().copied().collect(),
            bound: v.iter().copied().collect(),
            min_slack: slack.iter().copied().fold(f64::INFINITY, f64::min),
            holds: slack.iter().zip(v.iter()).all(|(s, v)| nonneg(*s, *v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReportRH {
    pub theta0: f64,
    pub eps: f64,
    pub theta_grid: Vec<f64>,
    /// Order 0 is the value inequality; order `l >= 1` uses `omega^(l-j)` and `omega~^(l)`.
    pub inequalities: Vec<InequalityReport>,
    /// Per order, whether the inequality holds at `theta0` alone.
    pub holds_at_theta0: Vec<bool>,
    /// Order 0 on the band and every higher order at `theta0`.
    pub differentiable_at_theta0: bool,
    /// `sum_{y in C} omega^(n)(x, y) v_n(y) K(x, y)` per interior state.
    pub top_order_integral: Vec<f64>,
    pub derivative_bounds: Option<Vec<BoundCheck>>,
    pub neighbourhood_note: String,
    /// Every slack on the band is nonnegative.
    pub passed: bool,
}

/// Outcome of checking `sum_n Q^n f <= v` given `Q v <= v - f`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `Q v <= v - f` held (within tolerance); otherwise nothing else was checked.
    pub applicable: bool,
    pub precondition_min_slack: f64,
    pub partial_sum: Vec<f64>,
    pub iterations: usize,
    /// The last increment fell below `1e-12`.
    pub converged: bool,
    pub min_slack: f64,
    pub holds: bool,
}

pub const COMPARISON_TOL: f64 = 1e-12;
pub const COMPARISON_MAX_ITER: usize = 100_000;

/// Sum `Q^n f` until the increment drops below `1e-12` (or `1e5` terms) and
/// compare with `v`.
pub fn comparison_bound_check(q: &FiniteKernel, f: &FiniteFunction, v: &FiniteFunction) -> Result<ComparisonReport> {
    let n = q.size();
    check_dim("comparison f", n, f.len())?;
    check_dim("comparison v", n, v.len())?;
    if q.is_signed() || q.entries().iter().any(|x| *x < 0.0) {
        return Err(Error::InvalidInput(
            "comparison bound needs a nonnegative kernel".into(),
        ));
    }
    if f.as_slice()
        .iter()
        .chain(v.as_slice())
        .any(|x| *x < 0.0 || !x.is_finite())
    {
        return Err(Error::InvalidInput(
            "comparison bound needs nonnegative finite f and v".into(),
        ));
    }
    let (qm, fv, vv) = (q.entries(), f.values(), v.values());
    let pre = vv - fv - qm * vv;
    let pre_min = pre.iter().copied().fold(f64::INFINITY, f64::min);
    let applicable = pre.iter().zip(vv.iter()).all(|(s, v)| nonneg(*s, *v));
    if !applicable {
        return Ok(ComparisonReport {
            applicable,
            precondition_min_slack: pre_min,
            partial_sum: vec![],
            iterations: 0,
            converged: false,
            min_slack: f64::NAN,
            holds: false,
        });
    }
    let mut term = fv.clone();
    let mut sum = fv.clone();
    let mut iterations = 0;
    let mut converged = term.amax() < COMPARISON_TOL;
    while !converged && iterations < COMPARISON_MAX_ITER {
        term = qm * &term;
        sum += &term;
        iterations += 1;
        converged = term.amax() < COMPARISON_TOL;
    }
    let slack = vv - &sum;
    Ok(ComparisonReport {
        applicable,
        precondition_min_slack: pre_min,
        partial_sum: sum.iter().copied().collect(),
        iterations,
        converged,
        min_slack: slack.iter().copied().fold(f64::INFINITY, f64::min),
        holds: slack.iter().zip(vv.iter()).all(|(s, v)| nonneg(*s, *v)),
    })
}

/// `|||K^m(theta)|||_w` search for the interior kernel, without factorizing.
pub fn interior_contraction(
    problem: &TargetProblem,
    theta: f64,
    w: &WeightFunction,
) -> Result<crate::kernel_algebra::ContractionCheck> {
    let w = problem.interior_weight(w)?;
    Ok(matrix_contraction_power(
        &problem.interior_kernel(theta)?,
        w.values(),
        DEFAULT_M_MAX,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_family::builtin;
    use crate::param_family::check_remark_conditions;

    fn hitting(theta0: f64, eps: f64) -> TargetProblem {
        let fam = builtin::geometric_exit(theta0, eps).unwrap();
        TargetProblem::undiscounted(
            fam,
            StateSubset::new(2, vec![1]).unwrap(),
            FiniteFunction::new(vec![0.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn ones(n: usize) -> WeightFunction {
        WeightFunction::constant(n)
    }

    #[test]
    fn hitting_time_value_and_derivatives() {
        let p = hitting(0.5, 0.1);
        let u = p.compute_u_star(0.5, &ones(1)).unwrap();
        assert!((u.as_slice()[0] - 2.0).abs() < 1e-14);
        let d = p.derivative_u_star(&ones(1)).unwrap();
        assert!((d.as_slice()[0] + 4.0).abs() < 1e-13);
        let ds = p.higher_derivatives(&ones(1), 2).unwrap();
        assert!((ds[2].as_slice()[0] - 16.0).abs() < 1e-12);
        assert_eq!(ds[1], d);
    }

    #[test]
    fn tilde_f_cases() {
        let p = hitting(0.5, 0.1);
        assert_eq!(p.build_tilde_f(0.4).unwrap().as_slice(), &[1.0]);
        // exit probability: f = indicator of the exit state, zero on C
        let fam = builtin::geometric_exit(0.5, 0.1).unwrap();
        let q = TargetProblem::undiscounted(
            fam,
            StateSubset::new(2, vec![1]).unwrap(),
            FiniteFunction::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert!((q.build_tilde_f(0.45).unwrap().as_slice()[0] - 0.45).abs() < 1e-15);
        let u = q.compute_u_star(0.45, &ones(1)).unwrap();
        assert!((u.as_slice()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_reward_gives_zero_value() {
        let fam = builtin::geometric_exit(0.5, 0.1).unwrap();
        let p =
            TargetProblem::undiscounted(fam, StateSubset::new(2, vec![1]).unwrap(), FiniteFunction::zeros(2)).unwrap();
        assert!(p
            .compute_u_star(0.5, &ones(1))
            .unwrap()
            .as_slice()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn infinite_horizon_discounted_matches_truncated_series() {
        let base = FiniteKernel::from_rows(&[vec![0.2, 0.8, 0.0], vec![0.3, 0.3, 0.4], vec![0.5, 0.0, 0.5]]).unwrap();
        let fam = builtin::constant(base.clone(), 0.0, 0.5).unwrap();
        let g = FiniteFunction::constant(3, (0.9f64).ln());
        let f = FiniteFunction::new(vec![1.0, -2.0, 0.5]).unwrap();
        let p = TargetProblem::new(fam, StateSubset::full(3), f.clone(), g).unwrap();
        let u = p.compute_u_star(0.0, &ones(3)).unwrap();
        let k = base.entries() * 0.9;
        let mut term = f.values().clone();
        let mut sum = term.clone();
        for _ in 0..400 {
            term = &k * term;
            sum += &term;
        }
        // tail after 400 terms is at most 0.9^401 / 0.1 * max|f|
        assert!((u.values() - sum).amax() < 1e-12);
    }

    #[test]
    fn identity_kernel_is_refused() {
        let fam = builtin::constant(FiniteKernel::identity(2), 0.0, 0.5).unwrap();
        let p = TargetProblem::undiscounted(fam, StateSubset::full(2), FiniteFunction::constant(2, 1.0)).unwrap();
        let e = p.compute_u_star(0.0, &ones(2)).unwrap_err();
        assert!(matches!(e, Error::ContractionInconclusive { .. }));
        assert!(e.is_refusal());
        let rep = check_remark_conditions(&p, &ones(2), 1, 65, DEFAULT_M_MAX).unwrap();
        assert!(!rep.contraction_holds);
    }

    #[test]
    fn constant_family_derivatives_vanish() {
        let base = FiniteKernel::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8], vec![0.0, 0.0, 1.0]]).unwrap();
        let fam = builtin::constant(base, 1.0, 0.5).unwrap();
        let p = TargetProblem::undiscounted(
            fam,
            StateSubset::new(3, vec![0, 1]).unwrap(),
            FiniteFunction::new(vec![1.0, 2.0, 3.0]).unwrap(),
        )
        .unwrap();
        let ds = p.higher_derivatives(&ones(2), 3).unwrap();
        for d in &ds[1..] {
            assert!(d.as_slice().iter().all(|v| *v == 0.0));
        }
        let m = p.signed_measure_representation(&ones(3), 0).unwrap();
        assert!(m.as_slice().iter().all(|v| *v == 0.0));
        let rep = check_remark_conditions(&p, &ones(3), 2, 65, DEFAULT_M_MAX).unwrap();
        assert!(rep.all_hold());
        assert!(rep.interior_envelope_sups[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hitting_time_certificate() {
        let (t0, eps) = (0.5, 0.1);
        let p = hitting(t0, eps);
        let v0 = 1.0 / (t0 - eps);
        // stay density (1 - theta)/(1 - t0) has envelope 2, so the order-1
        // inequality reads theta v1 >= 2 v0 (1 - theta): v1 >= 7.5 at theta = 0.4
        let v1 = 20.0;
        let cert = LyapunovCertificateRH::new(
            vec![
                FiniteFunction::new(vec![v0]).unwrap(),
                FiniteFunction::new(vec![v1]).unwrap(),
            ],
            eps,
        )
        .unwrap();
        let rep = p
            .verify_lyapunov_rh(&cert, DEFAULT_CERT_GRID, 65, Some(&ones(1)))
            .unwrap();
        assert!(rep.inequalities[0].holds, "{:?}", rep.inequalities[0].min_slack);
        assert!(rep.inequalities[0].min_slack.abs() < 1e-12);
        assert!(rep.passed);
        let b = &rep.derivative_bounds.as_ref().unwrap()[0];
        assert!(b.holds);
        let small = LyapunovCertificateRH::new(vec![FiniteFunction::new(vec![0.99 * v0]).unwrap()], eps).unwrap();
        assert!(
            !p.verify_lyapunov_rh(&small, DEFAULT_CERT_GRID, 65, None)
                .unwrap()
                .passed
        );
    }

    #[test]
    fn zero_problem_passes_with_zero_slack() {
        let fam = builtin::geometric_exit(0.5, 0.1).unwrap();
        let p =
            TargetProblem::undiscounted(fam, StateSubset::new(2, vec![1]).unwrap(), FiniteFunction::zeros(2)).unwrap();
        let cert = LyapunovCertificateRH::new(vec![FiniteFunction::zeros(1), FiniteFunction::zeros(1)], 0.1).unwrap();
        let rep = p.verify_lyapunov_rh(&cert, DEFAULT_CERT_GRID, 65, None).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.inequalities[0].min_slack, 0.0);
        assert_eq!(rep.inequalities[1].min_slack, 0.0);
    }

    #[test]
    fn proposed_certificate_passes_on_grid() {
        let p = hitting(0.5, 0.1);
        let prop = p
            .propose_certificate(2, 0.1, DEFAULT_CERT_GRID, 65, 1.0 + 1e-9)
            .unwrap();
        assert!(prop.heuristic);
        let rep = p
            .verify_lyapunov_rh(&prop.certificate, DEFAULT_CERT_GRID, 65, Some(&ones(1)))
            .unwrap();
        assert!(rep.passed);
        assert!(rep.derivative_bounds.unwrap().iter().all(|b| b.holds));
    }

    #[test]
    fn comparison_bound_examples() {
        let q = FiniteKernel::nonnegative(DMatrix::identity(2, 2) * 0.5).unwrap();
        let rep =
            comparison_bound_check(&q, &FiniteFunction::constant(2, 1.0), &FiniteFunction::constant(2, 2.0)).unwrap();
        assert!(rep.applicable && rep.holds && rep.converged);
        assert!((rep.partial_sum[0] - 2.0).abs() < 1e-11);
        let rep = comparison_bound_check(&q, &FiniteFunction::zeros(2), &FiniteFunction::constant(2, 3.0)).unwrap();
        assert!(rep.applicable && rep.holds && rep.iterations == 0);
        let rep =
            comparison_bound_check(&q, &FiniteFunction::constant(2, 1.0), &FiniteFunction::constant(2, 1.0)).unwrap();
        assert!(!rep.applicable);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(4, 0), 1.0);
        assert_eq!(binomial(6, 6), 1.0);
    }
}
