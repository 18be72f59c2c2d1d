//! Single-server queue with Pareto service times.
//!
//! Waiting times follow `W_{n+1} = [W_n + V_n - chi_{n+1}]^+` with
//! `P(V > v) = (1 + theta v)^(-alpha)`. The parameter moves only the service
//! law, so the chain is a stochastic recursion with noise `(V, chi)` and
//! density ratio `p(theta, v) = (theta/theta0) ((1 + theta v)/(1 + theta0 v))^(-alpha-1)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{estimate_pi_f, estimate_stationary_derivative, Regeneration, StationaryDerivativeEstimate};
use crate::quadrature::Composite;
use crate::recursion::{simulate_path, Path, PathTruncated, StochasticRecursion, Stop};
use crate::rng::{RngStream, SimRng};
use crate::stats::{mean, sample_variance, DerivativeEstimate, RatioEstimate};
use crate::SimError;

/// Law of the interarrival times `chi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Interarrival {
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    Tabulated { values: Vec<f64>, probs: Vec<f64> },
}

impl Interarrival {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidInput(m));
        match self {
            Interarrival::Exponential { rate } if !(*rate > 0.0 && rate.is_finite()) => {
                bad(format!("exponential rate {rate} must be positive"))
            }
            Interarrival::Deterministic { value } if !(*value >= 0.0 && value.is_finite()) => {
                bad(format!("deterministic interarrival {value} must be nonnegative"))
            }
            Interarrival::Tabulated { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad("tabulated interarrivals need matching nonempty values and probs".into());
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || probs.iter().any(|p| !(*p >= 0.0)) {
                    return bad("tabulated values and probabilities must be nonnegative".into());
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return bad(format!("tabulated probabilities sum to {s}, not 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Interarrival::Exponential { rate } => 1.0 / rate,
            Interarrival::Deterministic { value } => *value,
            Interarrival::Tabulated { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    /// Inverse-CDF draw from a uniform `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Interarrival::Exponential { rate } => -(1.0 - u).ln() / rate,
            Interarrival::Deterministic { value } => *value,
            Interarrival::Tabulated { values, probs } => {
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated nonempty")
            }
        }
    }

    /// `E[((y - chi)^+)^k]`.
    fn positive_part_moment(&self, y: f64, k: f64, rule: &Composite) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match self {
            Interarrival::Exponential { rate } => {
                // the exponential factor is below e^-60 past 60 / rate
                let top = y.min(60.0 / rate);
                rule.integrate(0.0, top, |c| (y - c).powf(k) * rate * (-rate * c).exp())
            }
            Interarrival::Deterministic { value } => (y - value).max(0.0).powf(k),
            Interarrival::Tabulated { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| p * (y - v).max(0.0).powf(k))
                .sum(),
        }
    }
}

/// The queue and the moment `f_p(w) = w^p` under study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GG1Model {
    pub alpha: f64,
    pub theta0: f64,
    pub interarrival: Interarrival,
    #[serde(rename = "p")]
    pub p_exponent: f64,
    pub eps: f64,
    /// Freeze the service law at `theta0`: scores vanish and densities are one.
    #[serde(default)]
    pub theta_independent: bool,
}

impl GG1Model {
    pub fn new(
        alpha: f64,
        theta0: f64,
        interarrival: Interarrival,
        p_exponent: f64,
        eps: f64,
    ) -> Result<Self, SimError> {
        let m = Self {
            alpha,
            theta0,
            interarrival,
            p_exponent,
            eps,
            theta_independent: false,
        };
        m.validate()?;
        Ok(m)
    }

    /// Pareto(5, 1) service, unit-rate Poisson arrivals, `p = 1`, band 0.1.
    pub fn mg1_example() -> Self {
        Self::new(5.0, 1.0, Interarrival::Exponential { rate: 1.0 }, 1.0, 0.1).expect("valid example")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(SimError::InvalidInput(format!(
                "Pareto shape alpha = {} must exceed 1",
                self.alpha
            )));
        }
        if !(self.theta0 > 0.0 && self.theta0.is_finite()) {
            return Err(SimError::InvalidInput(format!(
                "theta0 = {} must be positive",
                self.theta0
            )));
        }
        if !(self.eps > 0.0 && self.eps < self.theta0) {
            return Err(SimError::InvalidInput(format!(
                "band radius eps = {} must lie in (0, theta0)",
                self.eps
            )));
        }
        if !(self.p_exponent >= 1.0 && self.p_exponent.is_finite()) {
            return Err(SimError::InvalidInput(format!(
                "moment exponent p = {} must be >= 1",
                self.p_exponent
            )));
        }
        self.interarrival.validate()?;
        let ev = self.mean_service(self.theta0);
        let ec = self.interarrival.mean();
        if ev >= ec {
            return Err(SimError::Refusal(format!(
                "[stability] E V = 1/(theta0 (alpha - 1)) = {ev} must be below E chi = {ec}"
            )));
        }
        Ok(())
    }

    /// Refuse unless `p < alpha - 2`, the range where the stationary moment is
    /// differentiable.
    pub fn check_derivative_hypothesis(&self) -> Result<(), SimError> {
        if self.p_exponent < self.alpha - 2.0 {
            Ok(())
        } else {
            Err(SimError::Refusal(format!(
                "[p < r] differentiability of pi(theta) f_p needs p < alpha - 2; got p = {}, alpha = {}",
                self.p_exponent, self.alpha
            )))
        }
    }

    pub fn mean_service(&self, theta: f64) -> f64 {
        1.0 / (theta * (self.alpha - 1.0))
    }

    pub fn f_p(&self, w: f64) -> f64 {
        w.powf(self.p_exponent)
    }

    /// Service law parameter actually used when simulating at `theta`.
    fn effective_theta(&self, theta: f64) -> f64 {
        if self.theta_independent {
            self.theta0
        } else {
            theta
        }
    }
}

/// `((1 - u)^(-1/alpha) - 1) / theta`.
pub fn pareto_quantile(alpha: f64, theta: f64, u: f64) -> f64 {
    ((1.0 - u).powf(-1.0 / alpha) - 1.0) / theta
}

/// One service time under `theta0`.
pub fn pareto_sample(model: &GG1Model, rng: &mut SimRng) -> f64 {
    pareto_quantile(model.alpha, model.theta0, rng.random())
}

/// `(p(theta, v), p'(theta, v))`.
pub fn pareto_score(model: &GG1Model, theta: f64, v: f64) -> (f64, f64) {
    let a = model.alpha;
    let p = (theta / model.theta0) * ((1.0 + theta * v) / (1.0 + model.theta0 * v)).powf(-a - 1.0);
    (p, p * (1.0 / theta - (a + 1.0) * v / (1.0 + theta * v)))
}

const ENVELOPE_POINTS: usize = 41;

/// `sup |p'(theta, v)|` over the closed band, maximized on a uniform grid.
pub fn pareto_score_envelope(model: &GG1Model, v: f64) -> f64 {
    lyapsens_core::param_family::theta_grid(model.theta0, model.eps, ENVELOPE_POINTS)
        .into_iter()
        .map(|t| pareto_score(model, t, v).1.abs())
        .fold(0.0, f64::max)
}

/// One step's noise: the service time of the customer in service and the
/// following interarrival time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServiceArrival {
    pub v: f64,
    pub chi: f64,
}

/// The waiting-time chain as a stochastic recursion.
#[derive(Debug, Clone)]
pub struct LindleyRecursion {
    pub model: GG1Model,
}

impl LindleyRecursion {
    pub fn new(model: GG1Model) -> Self {
        Self { model }
    }
}

impl StochasticRecursion for LindleyRecursion {
    type State = f64;
    type Noise = ServiceArrival;

    fn theta0(&self) -> f64 {
        self.model.theta0
    }

    fn sample_noise(&self, rng: &mut SimRng) -> ServiceArrival {
        let v = pareto_sample(&self.model, rng);
        let chi = self.model.interarrival.quantile(rng.random());
        ServiceArrival { v, chi }
    }

    fn update(&self, w: &f64, z: &ServiceArrival) -> f64 {
        (w + z.v - z.chi).max(0.0)
    }

    fn density_ratio(&self, theta: f64, z: &ServiceArrival) -> f64 {
        if self.model.theta_independent {
            1.0
        } else {
            pareto_score(&self.model, theta, z.v).0
        }
    }

    fn score(&self, theta: f64, z: &ServiceArrival) -> f64 {
        if self.model.theta_independent {
            0.0
        } else {
            pareto_score(&self.model, theta, z.v).1
        }
    }

    fn score_envelope(&self, z: &ServiceArrival) -> Option<f64> {
        Some(if self.model.theta_independent {
            0.0
        } else {
            pareto_score_envelope(&self.model, z.v)
        })
    }
}

fn is_zero(w: &f64) -> bool {
    *w == 0.0
}

/// Waiting-time path from `w0`. The recursion produces exact zeros, so the
/// regeneration predicate is `W_n == 0`.
pub fn lindley_path(
    model: &GG1Model,
    w0: f64,
    stop: Stop<'_, f64>,
    rng: &RngStream,
) -> Result<Path<f64, ServiceArrival>, PathTruncated<f64, ServiceArrival>> {
    simulate_path(&LindleyRecursion::new(model.clone()), w0, stop, rng)
}

/// Stop rule for the first return to the empty queue.
pub fn empty_queue() -> &'static (dyn Fn(&f64) -> bool + Sync) {
    &is_zero
}

/// Closed-form mean wait and its `theta0`-derivative for Poisson arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MG1Oracle {
    pub rho: f64,
    pub mean_wait: f64,
    pub derivative: f64,
}

/// Pollaczek-Khinchine: `E W = lambda E V^2 / (2 (1 - rho))` with
/// `E V^2 = 2 / (theta^2 (alpha - 1)(alpha - 2))` and `rho = lambda / (theta (alpha - 1))`.
/// Simplified, `E W = lambda / ((alpha - 2) D)` with `D = theta^2 (alpha - 1) - lambda theta`,
/// so `dE W/dtheta = -lambda (2 theta (alpha - 1) - lambda) / ((alpha - 2) D^2)`.
pub fn mg1_oracle(model: &GG1Model) -> Result<MG1Oracle, SimError> {
    let lambda = match model.interarrival {
        Interarrival::Exponential { rate } => rate,
        _ => {
            return Err(SimError::Refusal(
                "the Pollaczek-Khinchine oracle needs exponential interarrivals".into(),
            ))
        }
    };
    if model.p_exponent != 1.0 {
        return Err(SimError::Refusal(format!(
            "the oracle covers the mean wait (p = 1), not p = {}",
            model.p_exponent
        )));
    }
    let (a, t) = (model.alpha, model.theta0);
    if a <= 2.0 {
        return Err(SimError::Refusal(format!("E V^2 is infinite for alpha = {a} <= 2")));
    }
    let rho = lambda / (t * (a - 1.0));
    if rho >= 1.0 {
        return Err(SimError::Refusal(format!(
            "[stability] traffic intensity rho = {rho} >= 1"
        )));
    }
    let d = t * t * (a - 1.0) - lambda * t;
    Ok(MG1Oracle {
        rho,
        mean_wait: lambda / ((a - 2.0) * d),
        derivative: -lambda * (2.0 * t * (a - 1.0) - lambda) / ((a - 2.0) * d * d),
    })
}

/// Central difference `(alpha(theta0 + h) - alpha(theta0 - h)) / 2h` from
/// `replications` pairs of runs of `steps` steps each, started empty. Both runs
/// of a pair share the uniforms behind `V` and `chi`.
pub fn crn_finite_difference(
    model: &GG1Model,
    h: f64,
    replications: usize,
    steps: usize,
    rng: &RngStream,
) -> Result<DerivativeEstimate, SimError> {
    if !(h > 0.0 && h < model.theta0) {
        return Err(SimError::InvalidInput(format!(
            "finite-difference step h = {h} must lie in (0, theta0)"
        )));
    }
    if replications < 2 || steps == 0 {
        return Err(SimError::InvalidInput(
            "need at least two replications of at least one step".into(),
        ));
    }
    let tp = model.effective_theta(model.theta0 + h);
    let tm = model.effective_theta(model.theta0 - h);
    let base = rng.substream(10);
    let values: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let mut r = base.substream(i as u64).rng();
            let (mut wp, mut wm) = (0.0f64, 0.0f64);
            let (mut sp, mut sm) = (0.0, 0.0);
            for _ in 0..steps {
                let u: f64 = r.random();
                let chi = model.interarrival.quantile(r.random());
                wp = (wp + pareto_quantile(model.alpha, tp, u) - chi).max(0.0);
                wm = (wm + pareto_quantile(model.alpha, tm, u) - chi).max(0.0);
                sp += model.f_p(wp);
                sm += model.f_p(wm);
            }
            (sp - sm) / steps as f64 / (2.0 * h)
        })
        .collect();
    DerivativeEstimate::from_samples(&values, "crn-finite-difference")
}

/// Simulation effort for [`run_gg1_derivative_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GG1Budget {
    pub n_pi_cycles: usize,
    pub n_outer: usize,
    pub warmup: usize,
    pub fd_replications: usize,
    pub fd_steps: usize,
    /// Finite-difference step; `0.01 theta0` when absent.
    #[serde(default)]
    pub h_fd: Option<f64>,
}

impl Default for GG1Budget {
    fn default() -> Self {
        Self {
            n_pi_cycles: 1_000_000,
            n_outer: 1_000_000,
            warmup: 50,
            fd_replications: 20,
            fd_steps: 1_000_000,
            h_fd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GG1DerivativeReport {
    pub model: GG1Model,
    pub estimate: StationaryDerivativeEstimate,
    pub fd: DerivativeEstimate,
    pub h_fd: f64,
    pub oracle: Option<MG1Oracle>,
    /// `(estimate - oracle) / SE`.
    pub z_oracle: Option<f64>,
    /// `(estimate - fd) / combined SE`.
    pub z_fd: f64,
    pub agrees_with_oracle: Option<bool>,
    pub agrees_with_fd: bool,
}

/// Estimate `d/dtheta E_pi f_p(W)` at `theta0` with the two-phase regenerative
/// score estimator, alongside the common-random-number finite difference and,
/// for Poisson arrivals and `p = 1`, the closed form.
pub fn run_gg1_derivative_experiment(
    model: &GG1Model,
    budget: &GG1Budget,
    rng: &RngStream,
) -> Result<GG1DerivativeReport, SimError> {
    model.validate()?;
    model.check_derivative_hypothesis()?;
    let rec = LindleyRecursion::new(model.clone());
    let f = |w: &f64| model.f_p(*w);
    let regen = Regeneration {
        state: 0.0,
        atom: &is_zero,
    };
    let estimate = estimate_stationary_derivative(
        &rec,
        &f,
        &regen,
        budget.n_outer,
        budget.n_pi_cycles,
        budget.warmup,
        &rng.substream(0),
    )?;
    let h = budget.h_fd.unwrap_or(0.01 * model.theta0);
    let fd = crn_finite_difference(model, h, budget.fd_replications, budget.fd_steps, &rng.substream(1))?;
    let oracle = match model.interarrival {
        Interarrival::Exponential { .. } if model.p_exponent == 1.0 && !model.theta_independent => {
            Some(mg1_oracle(model)?)
        }
        _ => None,
    };
    let e = &estimate.estimate;
    Ok(GG1DerivativeReport {
        model: model.clone(),
        z_oracle: oracle.map(|o| e.z_score(o.derivative)),
        agrees_with_oracle: oracle.map(|o| e.agrees_with(o.derivative, 3.0)),
        z_fd: (e.point - fd.point) / e.std_error.hypot(fd.std_error),
        agrees_with_fd: e.agrees_with_estimate(&fd, 3.0),
        estimate,
        fd,
        h_fd: h,
        oracle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeRow {
    pub n_outer: usize,
    pub point: f64,
    pub std_error: f64,
}

/// Standard error of the regenerative score estimator as the outer budget grows.
pub fn se_vs_budget(
    model: &GG1Model,
    budget: &GG1Budget,
    n_outer: &[usize],
    rng: &RngStream,
) -> Result<Vec<SeRow>, SimError> {
    model.validate()?;
    let rec = LindleyRecursion::new(model.clone());
    let f = |w: &f64| model.f_p(*w);
    let regen = Regeneration {
        state: 0.0,
        atom: &is_zero,
    };
    n_outer
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let e = estimate_stationary_derivative(
                &rec,
                &f,
                &regen,
                n,
                budget.n_pi_cycles,
                budget.warmup,
                &rng.substream(k as u64),
            )?;
            Ok(SeRow {
                n_outer: n,
                point: e.estimate.point,
                std_error: e.estimate.std_error,
            })
        })
        .collect()
}

/// Settings for [`appendix_bound_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Parameter increments `h` (absolute, not relative to `theta0`).
    pub h_list: Vec<f64>,
    pub x_grid: Vec<f64>,
    /// Level `m` of the truncated moment `min(w^p, m)`.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    pub n_mc: usize,
    pub n_pi_cycles: usize,
}

fn default_truncation() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeCell {
    pub h: f64,
    pub x: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundProbeReport {
    pub cells: Vec<ProbeCell>,
    pub pi_f: RatioEstimate,
    /// Fitted constant from the cells with each positive `h`.
    pub d_by_h: Vec<(f64, f64)>,
    /// Fitted constant from the first `k >= 2` grid points, keyed by the largest `x`.
    pub d_by_x_prefix: Vec<(f64, f64)>,
    pub d: f64,
    pub stable_h: bool,
    pub stable_x: bool,
    pub stable: bool,
}

fn within_factor_two(values: &[f64]) -> bool {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(0.0, f64::max);
    !values.is_empty() && lo > 0.0 && hi <= 2.0 * lo
}

/// Estimate `(P(theta0 + h) - P(theta0)) Gamma f(x) = E[(p(theta0 + h, V) - 1) Gamma f(W_1)]`
/// with `W_1 = [x + V - chi]^+` and `Gamma f` a single regenerative cycle of
/// `min(w^p, m) - pi f`. All `h` share the same draws.
///
/// For each `h`, `d_h` is the smallest `d` with
/// `|estimate| <= h d (x^p + 1) + 3 SE` on every grid `x`; the bound is
/// considered stable when these constants, and those fitted on growing prefixes
/// of the `x` grid, agree within a factor of two.
pub fn appendix_bound_probe(
    model: &GG1Model,
    config: &ProbeConfig,
    rng: &RngStream,
) -> Result<BoundProbeReport, SimError> {
    model.validate()?;
    model.check_derivative_hypothesis()?;
    if config.n_mc < 2 || config.x_grid.is_empty() || config.h_list.is_empty() {
        return Err(SimError::InvalidInput(
            "the probe needs h values, x values and n_mc >= 2".into(),
        ));
    }
    if config.x_grid.iter().any(|x| !(*x >= 0.0)) || config.h_list.iter().any(|h| !(*h >= 0.0)) {
        return Err(SimError::InvalidInput(
            "probe x and h values must be nonnegative".into(),
        ));
    }
    let m = config.truncation;
    let p = model.p_exponent;
    let rec = LindleyRecursion::new(model.clone());
    let f = move |w: &f64| w.powf(p).min(m);
    let regen = Regeneration {
        state: 0.0,
        atom: &is_zero,
    };
    let pi_f = estimate_pi_f(&rec, &f, &regen, config.n_pi_cycles, &rng.substream(0))?;
    let cap = rec.path_cap();
    let mut cells = Vec::new();
    for (ix, &x) in config.x_grid.iter().enumerate() {
        let base = rng.substream(1).substream(ix as u64);
        let draws: Vec<Result<(f64, f64), SimError>> = (0..config.n_mc)
            .into_par_iter()
            .map(|i| {
                let mut r = base.substream(i as u64).rng();
                let z = rec.sample_noise(&mut r);
                let mut w = rec.update(&x, &z);
                let mut g = 0.0;
                let mut n = 0usize;
                while w != 0.0 {
                    if n >= cap {
                        return Err(SimError::Truncation { cap });
                    }
                    g += f(&w) - pi_f.point;
                    let zz = rec.sample_noise(&mut r);
                    w = rec.update(&w, &zz);
                    n += 1;
                }
                Ok((z.v, g))
            })
            .collect();
        let draws: Vec<(f64, f64)> = draws.into_iter().collect::<Result<_, _>>()?;
        for &h in &config.h_list {
            let vals: Vec<f64> = draws
                .iter()
                .map(|(v, g)| {
                    let ratio = if model.theta_independent {
                        1.0
                    } else {
                        pareto_score(model, model.theta0 + h, *v).0
                    };
                    (ratio - 1.0) * g
                })
                .collect();
            cells.push(ProbeCell {
                h,
                x,
                estimate: mean(&vals),
                std_error: (sample_variance(&vals) / vals.len() as f64).sqrt(),
            });
        }
    }
    let fit = |c: &ProbeCell| (c.estimate.abs() - 3.0 * c.std_error).max(0.0) / (c.h * (c.x.powf(p) + 1.0));
    let positive_h: Vec<f64> = config.h_list.iter().copied().filter(|h| *h > 0.0).collect();
    let d_by_h: Vec<(f64, f64)> = positive_h
        .iter()
        .map(|&h| {
            let d = cells.iter().filter(|c| c.h == h).map(fit).fold(0.0, f64::max);
            (h, d)
        })
        .collect();
    let d_by_x_prefix: Vec<(f64, f64)> = (2..=config.x_grid.len())
        .map(|k| {
            let xs = &config.x_grid[..k];
            let d = cells
                .iter()
                .filter(|c| c.h > 0.0 && xs.contains(&c.x))
                .map(fit)
                .fold(0.0, f64::max);
            (xs[k - 1], d)
        })
        .collect();
    let d = d_by_h.iter().map(|e| e.1).fold(0.0, f64::max);
    let stable_h = within_factor_two(&d_by_h.iter().map(|e| e.1).collect::<Vec<_>>());
    let stable_x = if d_by_x_prefix.is_empty() {
        d > 0.0
    } else {
        within_factor_two(&d_by_x_prefix.iter().map(|e| e.1).collect::<Vec<_>>())
    };
    Ok(BoundProbeReport {
        cells,
        pi_f,
        d_by_h,
        d_by_x_prefix,
        d,
        stable_h,
        stable_x,
        stable: stable_h && stable_x,
    })
}

/// Constants of the drift certificate `v0 = a1 x^(p+1)`, `v1 = a2 x^(r+2)`,
/// `kappa(s) = s^((1+r)/(1+p))`, small set `A = [0, c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConstants {
    pub a1: f64,
    pub a2: f64,
    pub r: f64,
    /// Small-set boundary; the minimal workable value is used when absent.
    #[serde(default)]
    pub c: Option<f64>,
}

/// Evaluation grid for [`gg1_drift_verification`]: `x = x_max i / points`,
/// `i = 1..=points`, and `theta_points` values across the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftGrid {
    pub x_max: f64,
    pub points: usize,
    #[serde(default = "default_theta_points")]
    pub theta_points: usize,
}

fn default_theta_points() -> usize {
    5
}

impl Default for DriftGrid {
    fn default() -> Self {
        Self {
            x_max: 200.0,
            points: 100,
            theta_points: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub x: f64,
    /// `sup_theta x^(-p) (P(theta) v0 - v0)(x)`; at most -1 where the zeroth condition holds.
    pub drift_v0: f64,
    /// `inf_theta [v0(x) - max(x^p, 1) - P(theta) v0(x)]`.
    pub slack_v0: f64,
    /// `inf_theta [v1(x) - P(theta) v1(x) - kappa(E^theta (1 v w(V)) (v0(W_1) + 1))]`.
    pub slack_v1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub constants: DriftConstants,
    pub rows: Vec<DriftRow>,
    /// `a1 (p + 1) sup_theta (1/(theta (alpha - 1)) - E chi)`, the large-`x` limit of `drift_v0`.
    pub limit_drift: f64,
    pub min_c_v0: Option<f64>,
    pub min_c_v1: Option<f64>,
    pub c: Option<f64>,
    /// Largest violation of the zeroth condition on `[0, c]`.
    pub c0: f64,
    /// Largest violation of the first-order condition on `[0, c]`.
    pub c1: f64,
    pub passed: bool,
}

/// Service-law expectations `E^theta h(V)` by the substitution `1 - u = t^m`,
/// which tames the heavy tail for integrands growing like `v^k` with `k < alpha`.
struct ServiceRule {
    v: Vec<f64>,
    w: Vec<f64>,
}

impl ServiceRule {
    fn new(alpha: f64, theta: f64, k: f64, rule: &Composite) -> Self {
        let m = (3.0 / (1.0 - k / alpha)).max(1.0);
        let (v, w) = rule
            .points(0.0, 1.0)
            .into_iter()
            .map(|(t, wt)| ((t.powf(-m / alpha) - 1.0) / theta, wt * m * t.powf(m - 1.0)))
            .unzip();
        Self { v, w }
    }

    fn expect(&self, mut h: impl FnMut(f64) -> f64) -> f64 {
        self.v.iter().zip(&self.w).map(|(v, w)| w * h(*v)).sum()
    }
}

impl DriftConstants {
    /// Choose `a1` so the limiting drift of `v0` is -2 and `a2` so the
    /// first-order slack grows like `x^(r+1)`; `r` must lie in `(p, alpha - 2)`.
    pub fn recipe(model: &GG1Model, r: f64) -> Result<Self, SimError> {
        model.validate()?;
        let p = model.p_exponent;
        if !(r > p && r < model.alpha - 2.0) {
            return Err(SimError::Refusal(format!(
                "[v1 moment] the exponent r = {r} must lie in (p, alpha - 2) = ({p}, {})",
                model.alpha - 2.0
            )));
        }
        let mu = model.mean_service(model.theta0 - model.eps) - model.interarrival.mean();
        if mu >= 0.0 {
            return Err(SimError::Refusal(format!(
                "[stability] the drift sup_theta E V - E chi = {mu} is not negative across the band"
            )));
        }
        let a1 = 2.0 / ((p + 1.0) * mu.abs());
        let rule = Composite::new(32, 16);
        let cbar = lyapsens_core::param_family::theta_grid(model.theta0, model.eps, 5)
            .into_iter()
            .map(|t| ServiceRule::new(model.alpha, t, 0.0, &rule).expect(|v| pareto_score_envelope(model, v).max(1.0)))
            .fold(0.0, f64::max);
        let rho = (1.0 + r) / (1.0 + p);
        let a2 = 2.0 * (cbar * a1).powf(rho) / ((r + 2.0) * mu.abs());
        Ok(Self { a1, a2, r, c: None })
    }
}

/// Check the drift conditions of the stationary certificate by deterministic
/// quadrature on a grid of `x` and `theta`.
pub fn gg1_drift_verification(
    model: &GG1Model,
    constants: &DriftConstants,
    grid: &DriftGrid,
) -> Result<DriftReport, SimError> {
    model.validate()?;
    let p = model.p_exponent;
    let r = constants.r;
    if !(r + 2.0 < model.alpha) {
        return Err(SimError::Refusal(format!(
            "[v1 moment] P v1 needs E V^(r+2) < infinity, i.e. r + 2 < alpha; got r = {r}, alpha = {}",
            model.alpha
        )));
    }
    if grid.points == 0 || !(grid.x_max > 0.0) {
        return Err(SimError::InvalidInput(
            "drift grid needs points > 0 and x_max > 0".into(),
        ));
    }
    let (a1, a2) = (constants.a1, constants.a2);
    let rho = (1.0 + r) / (1.0 + p);
    let inner = Composite::new(4, 16);
    let outer = Composite::new(32, 16);
    let thetas = lyapsens_core::param_family::theta_grid(model.theta0, model.eps, grid.theta_points.max(2));
    let rules: Vec<(ServiceRule, Vec<f64>)> = thetas
        .iter()
        .map(|&t| {
            let rule = ServiceRule::new(model.alpha, t, r + 2.0, &outer);
            let omega = rule
                .v
                .iter()
                .map(|&v| pareto_score_envelope(model, v).max(1.0))
                .collect();
            (rule, omega)
        })
        .collect();
    let ia = &model.interarrival;
    let eval = |x: f64| -> (f64, f64, f64) {
        let mut drift = f64::NEG_INFINITY;
        let mut s0 = f64::INFINITY;
        let mut s1 = f64::INFINITY;
        let v0x = a1 * x.powf(p + 1.0);
        let v1x = a2 * x.powf(r + 2.0);
        for (rule, omega) in &rules {
            let mut pv0 = 0.0;
            let mut pv1 = 0.0;
            let mut kap = 0.0;
            for ((v, w), om) in rule.v.iter().zip(&rule.w).zip(omega) {
                let m0 = ia.positive_part_moment(x + v, p + 1.0, &inner);
                let m1 = ia.positive_part_moment(x + v, r + 2.0, &inner);
                pv0 += w * a1 * m0;
                pv1 += w * a2 * m1;
                kap += w * om * (a1 * m0 + 1.0);
            }
            if x > 0.0 {
                drift = drift.max((pv0 - v0x) / x.powf(p));
            }
            s0 = s0.min(v0x - x.powf(p).max(1.0) - pv0);
            s1 = s1.min(v1x - pv1 - kap.powf(rho));
        }
        (drift, s0, s1)
    };
    let xs: Vec<f64> = (1..=grid.points)
        .map(|i| grid.x_max * i as f64 / grid.points as f64)
        .collect();
    let rows: Vec<DriftRow> = xs
        .par_iter()
        .map(|&x| {
            let (drift_v0, slack_v0, slack_v1) = eval(x);
            DriftRow {
                x,
                drift_v0,
                slack_v0,
                slack_v1,
            }
        })
        .collect();
    let min_c = |ok: &dyn Fn(&DriftRow) -> bool| -> Option<f64> {
        let mut c = None;
        for row in rows.iter().rev() {
            if ok(row) {
                c = Some(row.x);
            } else {
                break;
            }
        }
        c
    };
    let min_c_v0 = min_c(&|row| row.drift_v0 <= -1.0);
    let min_c_v1 = min_c(&|row| row.slack_v1 >= 0.0);
    let c = constants.c.or(match (min_c_v0, min_c_v1) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    });
    let (mut c0, mut c1) = (0.0f64, 0.0f64);
    if let Some(c) = c {
        let (_, s0, s1) = eval(0.0);
        c0 = c0.max(-s0);
        c1 = c1.max(-s1);
        for row in rows.iter().filter(|row| row.x <= c) {
            c0 = c0.max(-row.slack_v0);
            c1 = c1.max(-row.slack_v1);
        }
    }
    let passed = match c {
        Some(c) => rows
            .iter()
            .filter(|row| row.x >= c)
            .all(|row| row.drift_v0 <= -1.0 && row.slack_v1 >= 0.0),
        None => false,
    };
    let mu = model.mean_service(model.theta0 - model.eps) - model.interarrival.mean();
    Ok(DriftReport {
        constants: constants.clone(),
        rows,
        limit_drift: a1 * (p + 1.0) * mu,
        min_c_v0,
        min_c_v1,
        c,
        c0,
        c1,
        passed,
    })
}
