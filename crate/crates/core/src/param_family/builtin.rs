//! Ready-made parameterized families.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use super::{FamilyDomain, ParamKernelFamily};
use crate::error::{Error, Result};
use crate::kernel_algebra::FiniteKernel;

/// `P(theta) = [[1 - theta, theta], [q, 1 - q]]` on `(0, 1)`.
pub fn two_state(q: f64, theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!("q = {q} must lie in [0, 1]")));
    }
    ParamKernelFamily::from_kernel_path(
        "two-state",
        FamilyDomain::new(theta0, radius, (0.0, 1.0))?,
        4,
        Arc::new(move |t| DMatrix::from_row_slice(2, 2, &[1.0 - t, t, q, 1.0 - q])),
        Arc::new(|j, _| {
            if j == 1 {
                DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0])
            } else {
                DMatrix::zeros(2, 2)
            }
        }),
    )
}

/// Absorbing exit state 0 and `P(theta) = [[1, 0], [theta, 1 - theta]]`: from
/// state 1 the exit time is geometric with mean `1 / theta`.
pub fn geometric_exit(theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    ParamKernelFamily::from_kernel_path(
        "geometric-exit",
        FamilyDomain::new(theta0, radius, (0.0, 1.0))?,
        usize::MAX,
        Arc::new(|t| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, t, 1.0 - t])),
        Arc::new(|j, _| {
            if j == 1 {
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -1.0])
            } else {
                DMatrix::zeros(2, 2)
            }
        }),
    )
}

/// `P(theta) = [[1 - theta, theta], [theta, 1 - theta]]` on `(0, 1)`.
pub fn symmetric_two_state(theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    ParamKernelFamily::from_kernel_path(
        "symmetric-two-state",
        FamilyDomain::new(theta0, radius, (0.0, 1.0))?,
        usize::MAX,
        Arc::new(|t| DMatrix::from_row_slice(2, 2, &[1.0 - t, t, t, 1.0 - t])),
        Arc::new(|j, _| {
            if j == 1 {
                DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])
            } else {
                DMatrix::zeros(2, 2)
            }
        }),
    )
}

/// Density `k(theta) = theta / theta0` on `(0, inf)`.
pub fn scalar(base: FiniteKernel, theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    ParamKernelFamily::from_density(
        "scalar",
        base,
        FamilyDomain::new(theta0, radius, (0.0, f64::INFINITY))?,
        usize::MAX,
        Arc::new(move |t, _, _| t / theta0),
        Arc::new(move |j, _, _, _| if j == 1 { 1.0 / theta0 } else { 0.0 }),
    )
}

/// Density identically one: the kernel does not depend on `theta`.
pub fn constant(base: FiniteKernel, theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    ParamKernelFamily::from_density(
        "constant",
        base,
        FamilyDomain::new(theta0, radius, (f64::NEG_INFINITY, f64::INFINITY))?,
        usize::MAX,
        Arc::new(|_, _, _| 1.0),
        Arc::new(|_, _, _, _| 0.0),
    )
}

/// Unnormalized exponential tilt `k(theta, x, y) = exp((theta - theta0) s(x, y))`,
/// with `k^(j) = s^j k`. Suited to discounted or substochastic kernels.
pub fn exponential_tilt(base: FiniteKernel, tilt: DMatrix<f64>, theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    if tilt.shape() != (base.size(), base.size()) {
        return Err(Error::DimensionMismatch {
            context: "tilt matrix",
            expected: base.size(),
            found: tilt.nrows(),
        });
    }
    let s1 = Arc::new(tilt);
    let s2 = s1.clone();
    let fam = ParamKernelFamily::from_density(
        "exponential-tilt",
        base,
        FamilyDomain::new(theta0, radius, (f64::NEG_INFINITY, f64::INFINITY))?,
        usize::MAX,
        Arc::new(move |t, x, y| ((t - theta0) * s1[(x, y)]).exp()),
        Arc::new(move |j, t, x, y| {
            let s = s2[(x, y)];
            s.powi(j as i32) * ((t - theta0) * s).exp()
        }),
    )?;
    Ok(fam)
}

/// Row-normalized exponential tilt
/// `P(theta, x, y) = b(x, y) exp(theta s(x, y)) / sum_z b(x, z) exp(theta s(x, z))`.
///
/// Every `P(theta)` is stochastic. Derivatives are available up to order 3 via
/// the row-wise cumulants of `s` under `P(theta, x, .)`.
pub fn softmax_tilt(weights: DMatrix<f64>, tilt: DMatrix<f64>, theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    let n = weights.nrows();
    if weights.shape() != (n, n) || tilt.shape() != (n, n) {
        return Err(Error::InvalidInput(
            "softmax weights and tilt must be square and equal size".into(),
        ));
    }
    if weights.iter().any(|v| *v < 0.0 || !v.is_finite()) || weights.row_iter().any(|r| r.sum() <= 0.0) {
        return Err(Error::InvalidInput(
            "softmax weights must be nonnegative with positive row sums".into(),
        ));
    }
    let w = Arc::new(weights);
    let s = Arc::new(tilt);
    let (w1, s1) = (w.clone(), s.clone());
    let kernel = Arc::new(move |t: f64| softmax_kernel(&w1, &s1, t));
    let derivative = Arc::new(move |j: usize, t: f64| {
        let p = softmax_kernel(&w, &s, t);
        let n = p.nrows();
        let mut out = DMatrix::zeros(n, n);
        for x in 0..n {
            let m1: f64 = (0..n).map(|y| p[(x, y)] * s[(x, y)]).sum();
            let k2: f64 = (0..n).map(|y| p[(x, y)] * (s[(x, y)] - m1).powi(2)).sum();
            let k3: f64 = (0..n).map(|y| p[(x, y)] * (s[(x, y)] - m1).powi(3)).sum();
            for y in 0..n {
                let l1 = s[(x, y)] - m1;
                let factor = match j {
                    1 => l1,
                    2 => l1 * l1 - k2,
                    3 => l1.powi(3) - 3.0 * l1 * k2 - k3,
                    _ => f64::NAN,
                };
                out[(x, y)] = p[(x, y)] * factor;
            }
        }
        out
    });
    ParamKernelFamily::from_kernel_path(
        "softmax-tilt",
        FamilyDomain::new(theta0, radius, (f64::NEG_INFINITY, f64::INFINITY))?,
        3,
        kernel,
        derivative,
    )
}

fn softmax_kernel(w: &DMatrix<f64>, s: &DMatrix<f64>, theta: f64) -> DMatrix<f64> {
    let n = w.nrows();
    let mut p = DMatrix::zeros(n, n);
    for x in 0..n {
        // shift by the row maximum for overflow safety
        let shift = (0..n)
            .filter(|&y| w[(x, y)] > 0.0)
            .map(|y| theta * s[(x, y)])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for y in 0..n {
            if w[(x, y)] > 0.0 {
                let e = w[(x, y)] * (theta * s[(x, y)] - shift).exp();
                p[(x, y)] = e;
                z += e;
            }
        }
        for y in 0..n {
            p[(x, y)] /= z;
        }
    }
    p
}

/// Family interpolating kernels tabulated on a `theta` grid.
///
/// Each entry is fitted by the polynomial through the tabulated values (in
/// powers of `theta - theta0`), so derivatives of every order exist in closed
/// form. All tables must share one support.
pub fn tabulated(thetas: &[f64], kernels: &[DMatrix<f64>], theta0: f64, radius: f64) -> Result<ParamKernelFamily> {
    let m = thetas.len();
    if m < 2 || kernels.len() != m {
        return Err(Error::InvalidInput(format!(
            "tabulated family needs at least two theta values and one kernel per value, got {} and {}",
            m,
            kernels.len()
        )));
    }
    let n = kernels[0].nrows();
    if kernels.iter().any(|k| k.shape() != (n, n)) {
        return Err(Error::InvalidInput(
            "tabulated kernels must be square and equal size".into(),
        ));
    }
    for k in kernels {
        for x in 0..n {
            for y in 0..n {
                if (k[(x, y)] > 0.0) != (kernels[0][(x, y)] > 0.0) {
                    return Err(Error::Model(format!(
                        "tabulated kernels disagree on the support at ({x}, {y}); theta-dependent supports are not supported"
                    )));
                }
            }
        }
    }
    let lo = thetas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vander = DMatrix::from_fn(m, m, |i, p| (thetas[i] - theta0).powi(p as i32));
    let lu = LU::new(vander);
    let mut coeffs = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            let rhs = DVector::from_iterator(m, kernels.iter().map(|k| k[(x, y)]));
            let c = lu
                .solve(&rhs)
                .ok_or_else(|| Error::InvalidInput("tabulated theta values must be distinct".into()))?;
            coeffs.push(c);
        }
    }
    let coeffs = Arc::new(coeffs);
    let c2 = coeffs.clone();
    let eval = move |coeffs: &[DVector<f64>], j: usize, t: f64| {
        let d = t - theta0;
        DMatrix::from_fn(n, n, |x, y| {
            let c = &coeffs[x * n + y];
            (j..c.len())
                .map(|p| {
                    let falling: f64 = ((p - j + 1)..=p).map(|v| v as f64).product();
                    c[p] * falling * d.powi((p - j) as i32)
                })
                .sum()
        })
    };
    let eval2 = eval;
    ParamKernelFamily::from_kernel_path(
        "tabulated",
        FamilyDomain::new(theta0, radius, (lo, hi))?,
        usize::MAX,
        Arc::new(move |t| eval(&coeffs, 0, t)),
        Arc::new(move |j, t| eval2(&c2, j, t)),
    )
}

/// Interarrival law for the discretized queue, on the same grid as the waiting time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridInterarrival {
    Exponential {
        rate: f64,
    },
    Deterministic {
        value: f64,
    },
    /// Values must be multiples of the grid step.
    Tabulated {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
}

/// Discretized Lindley chain `W' = [W + V - chi]^+` with Pareto(alpha, theta)
/// service, `P(V > v) = (1 + theta v)^(-alpha)`, on the grid `{0, step, .., (n-1) step}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoGridSpec {
    pub alpha: f64,
    pub theta0: f64,
    pub radius: f64,
    pub step: f64,
    pub n_states: usize,
    pub interarrival: GridInterarrival,
}

impl ParetoGridSpec {
    /// Pareto(5, 1) service, unit-rate Poisson arrivals, 80 states of width 0.25.
    pub fn example() -> Self {
        Self {
            alpha: 5.0,
            theta0: 1.0,
            radius: 0.1,
            step: 0.25,
            n_states: 80,
            interarrival: GridInterarrival::Exponential { rate: 1.0 },
        }
    }

    pub fn state_values(&self) -> Vec<f64> {
        (0..self.n_states).map(|i| i as f64 * self.step).collect()
    }
}

/// `d^j/dtheta^j (1 + theta v)^(-alpha)`.
fn pareto_survival_derivative(alpha: f64, theta: f64, v: f64, j: usize) -> f64 {
    let coef: f64 = (0..j).map(|i| -alpha - i as f64).product();
    coef * v.powi(j as i32) * (1.0 + theta * v).powf(-alpha - j as f64)
}

fn cell_edges(step: f64, cells: usize) -> Vec<f64> {
    // cell 0 = [0, step/2), cell k = [(k - 1/2) step, (k + 1/2) step), last cell open
    let mut e = vec![0.0];
    e.extend((1..cells).map(|k| (k as f64 - 0.5) * step));
    e
}

fn service_pmf(spec: &ParetoGridSpec, theta: f64, order: usize) -> Vec<f64> {
    let cells = spec.n_states;
    let e = cell_edges(spec.step, cells);
    let surv = |v: f64| pareto_survival_derivative(spec.alpha, theta, v, order);
    (0..cells)
        .map(|k| {
            if k + 1 < cells {
                surv(e[k]) - surv(e[k + 1])
            } else {
                surv(e[k])
            }
        })
        .collect()
}

fn interarrival_pmf(spec: &ParetoGridSpec) -> Result<Vec<f64>> {
    let cells = spec.n_states;
    let mut pmf = vec![0.0; cells];
    let to_cell = |v: f64| -> Result<usize> {
        let c = v / spec.step;
        if v < 0.0 || (c - c.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "interarrival value {v} is not a nonnegative multiple of the grid step {}",
                spec.step
            )));
        }
        Ok((c.round() as usize).min(cells - 1))
    };
    match &spec.interarrival {
        GridInterarrival::Exponential { rate } => {
            if *rate <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "interarrival rate {rate} must be positive"
                )));
            }
            let e = cell_edges(spec.step, cells);
            let surv = |v: f64| (-rate * v).exp();
            for k in 0..cells {
                pmf[k] = if k + 1 < cells {
                    surv(e[k]) - surv(e[k + 1])
                } else {
                    surv(e[k])
                };
            }
        }
        GridInterarrival::Deterministic { value } => pmf[to_cell(*value)?] = 1.0,
        GridInterarrival::Tabulated { values, probs } => {
            if values.len() != probs.len()
                || probs.iter().any(|p| *p < 0.0)
                || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(Error::InvalidInput(
                    "tabulated interarrival needs matching values and probabilities summing to 1".into(),
                ));
            }
            for (v, p) in values.iter().zip(probs) {
                pmf[to_cell(*v)?] += p;
            }
        }
    }
    Ok(pmf)
}

fn lindley_matrix(n: usize, service: &[f64], arrival: &[f64]) -> DMatrix<f64> {
    // increment d = k - c ranges over [-(n-1), n-1]; index d + n - 1
    let mut inc = vec![0.0; 2 * n - 1];
    for (k, pv) in service.iter().enumerate() {
        if *pv == 0.0 {
            continue;
        }
        for (c, pc) in arrival.iter().enumerate() {
            inc[k + n - 1 - c] += pv * pc;
        }
    }
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for (idx, pd) in inc.iter().enumerate() {
            let target = (i as i64 + idx as i64 - (n as i64 - 1)).clamp(0, n as i64 - 1) as usize;
            p[(i, target)] += pd;
        }
    }
    p
}

/// The discretized Pareto-service Lindley chain as a family in the Pareto scale.
///
/// Service times are rounded to the nearest grid cell (the top cell absorbs the
/// tail) so rows are exact probability vectors; waiting times above the grid
/// are clamped to the top state. Derivatives of every order come from the
/// closed-form `theta`-derivatives of the Pareto survival function.
pub fn pareto_lindley_grid(spec: &ParetoGridSpec) -> Result<ParamKernelFamily> {
    if spec.alpha <= 1.0 || spec.step <= 0.0 || spec.n_states < 2 {
        return Err(Error::InvalidInput(format!(
            "need alpha > 1, step > 0 and at least two states, got alpha = {}, step = {}, n = {}",
            spec.alpha, spec.step, spec.n_states
        )));
    }
    let arrival = Arc::new(interarrival_pmf(spec)?);
    let (s1, s2) = (spec.clone(), spec.clone());
    let a2 = arrival.clone();
    let n = spec.n_states;
    ParamKernelFamily::from_kernel_path(
        "pareto-scale",
        FamilyDomain::new(spec.theta0, spec.radius, (0.0, f64::INFINITY))?,
        usize::MAX,
        Arc::new(move |t| lindley_matrix(n, &service_pmf(&s1, t, 0), &arrival)),
        Arc::new(move |j, t| lindley_matrix(n, &service_pmf(&s2, t, j), &a2)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_family::score_mean_diagnostic;

    #[test]
    fn pareto_grid_rows_stay_stochastic_off_theta0() {
        let spec = ParetoGridSpec::example();
        let fam = pareto_lindley_grid(&spec).unwrap();
        let k = fam.eval_kernel(spec.theta0 + 0.01).unwrap();
        for s in k.row_sums() {
            assert!((s - 1.0).abs() < 1e-9);
        }
        let diag = score_mean_diagnostic(&fam, 1e-6).unwrap();
        assert!(diag.max_abs <= 1e-6, "{}", diag.max_abs);
        assert!(diag.base_stochastic);
    }

    #[test]
    fn pareto_grid_score_matches_central_difference() {
        let spec = ParetoGridSpec::example();
        let fam = pareto_lindley_grid(&spec).unwrap();
        let s = fam.score_kernel().unwrap();
        let h = 1e-5;
        let kp = fam.eval_kernel(spec.theta0 + h).unwrap();
        let km = fam.eval_kernel(spec.theta0 - h).unwrap();
        let fd = (kp.entries() - km.entries()) / (2.0 * h);
        assert!((fd - s.entries()).abs().max() < 1e-8);
    }

    #[test]
    fn deterministic_interarrival_must_sit_on_grid() {
        let mut spec = ParetoGridSpec::example();
        spec.interarrival = GridInterarrival::Deterministic { value: 0.3 };
        assert!(pareto_lindley_grid(&spec).is_err());
        spec.interarrival = GridInterarrival::Deterministic { value: 0.5 };
        assert!(pareto_lindley_grid(&spec).is_ok());
    }

    #[test]
    fn tabulated_reproduces_linear_family() {
        let mk = |t: f64| DMatrix::from_row_slice(2, 2, &[1.0 - t, t, 0.3, 0.7]);
        let thetas = [0.2, 0.3, 0.4];
        let fam = tabulated(&thetas, &thetas.map(mk), 0.3, 0.05).unwrap();
        let k = fam.eval_kernel(0.33).unwrap();
        assert!((k.entries() - mk(0.33)).abs().max() < 1e-14);
        let s = fam.score_kernel().unwrap();
        assert!((s.get(0, 0) + 1.0).abs() < 1e-12 && (s.get(0, 1) - 1.0).abs() < 1e-12);
        assert!(fam.derivative_kernel(2, 0.3).unwrap().entries().abs().max() < 1e-10);
    }

    #[test]
    fn softmax_higher_scores_match_finite_differences() {
        let w = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0]);
        let s = DMatrix::from_row_slice(3, 3, &[0.3, -1.0, 0.0, 2.0, 0.1, -0.4, 1.0, 0.0, -1.0]);
        let fam = softmax_tilt(w, s, 0.2, 0.1).unwrap();
        let h = 1e-4;
        for j in 1..=3 {
            let dp = fam.derivative_kernel(j - 1, 0.2 + h).unwrap();
            let dm = fam.derivative_kernel(j - 1, 0.2 - h).unwrap();
            let fd = (dp.entries() - dm.entries()) / (2.0 * h);
            let exact = fam.derivative_kernel(j, 0.2).unwrap();
            assert!((fd - exact.entries()).abs().max() < 1e-6, "order {j}");
        }
    }
}
