//! Likelihood-ratio and regenerative estimators.
//!
//! Every estimator draws path `i` from `rng.substream(phase).substream(i)` and
//! aggregates in index order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::recursion::StochasticRecursion;
use crate::rng::RngStream;
use crate::stats::{mean, sample_variance, DerivativeEstimate, RatioEstimate};
use crate::SimError;

/// Reward `f`, discount exponent `g` and interior set `C` of a random-horizon
/// problem. The horizon `T` is the first exit time from `C`.
#[derive(Clone, Copy)]
pub struct Payoff<'a, S> {
    pub reward: &'a (dyn Fn(&S) -> f64 + Sync),
    pub discount: Option<&'a (dyn Fn(&S) -> f64 + Sync)>,
    pub interior: &'a (dyn Fn(&S) -> bool + Sync),
}

impl<'a, S> Payoff<'a, S> {
    pub fn undiscounted(reward: &'a (dyn Fn(&S) -> f64 + Sync), interior: &'a (dyn Fn(&S) -> bool + Sync)) -> Self {
        Self {
            reward,
            discount: None,
            interior,
        }
    }

    fn exp_g(&self, x: &S) -> f64 {
        self.discount.map_or(1.0, |g| g(x).exp())
    }
}

/// A regeneration atom: the chain restarts afresh whenever `atom` holds, and
/// `state` is the state it restarts from.
#[derive(Clone)]
pub struct Regeneration<'a, S> {
    pub state: S,
    pub atom: &'a (dyn Fn(&S) -> bool + Sync),
}

const PHASE_PATHS: u64 = 0;
const PHASE_PI: u64 = 1;
const PHASE_OUTER: u64 = 2;
const PHASE_LYAPUNOV: u64 = 3;

fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T, SimError> + Sync + Send) -> Result<Vec<T>, SimError> {
    let out: Vec<Result<T, SimError>> = (0..n).into_par_iter().map(f).collect();
    out.into_iter().collect()
}

fn check_n(n: usize, what: &str) -> Result<(), SimError> {
    if n == 0 {
        Err(SimError::InvalidInput(format!("{what} must be positive")))
    } else {
        Ok(())
    }
}

/// One random-horizon path: the discounted payoff `U` and the score estimator
/// `sum_{m=1}^T p'(theta0, Z_m) (U - A_m)`, where `A_m` is the payoff accrued
/// before step `m`.
fn rh_path<R: StochasticRecursion>(
    rec: &R,
    payoff: &Payoff<'_, R::State>,
    x0: &R::State,
    rng: &RngStream,
) -> Result<(f64, f64), SimError> {
    let cap = rec.path_cap();
    let theta0 = rec.theta0();
    let mut r = rng.rng();
    let mut x = x0.clone();
    let mut disc = 1.0;
    let mut acc = 0.0;
    let mut score_sum = 0.0;
    let mut weighted = 0.0;
    let mut steps = 0usize;
    while (payoff.interior)(&x) {
        if steps >= cap {
            return Err(SimError::Truncation { cap });
        }
        acc += disc * (payoff.reward)(&x);
        disc *= payoff.exp_g(&x);
        let z = rec.sample_noise(&mut r);
        let s = rec.score(theta0, &z);
        score_sum += s;
        weighted += s * acc;
        x = rec.update(&x, &z);
        steps += 1;
    }
    acc += disc * (payoff.reward)(&x);
    Ok((acc, acc * score_sum - weighted))
}

/// Per-path `(payoff, derivative term)` pairs, in path order.
pub fn random_horizon_samples<R: StochasticRecursion>(
    rec: &R,
    payoff: &Payoff<'_, R::State>,
    x0: &R::State,
    n_paths: usize,
    rng: &RngStream,
) -> Result<Vec<(f64, f64)>, SimError> {
    check_n(n_paths, "n_paths")?;
    let base = rng.substream(PHASE_PATHS);
    par_map(n_paths, |i| rh_path(rec, payoff, x0, &base.substream(i as u64)))
}

/// Estimate `u*(theta0, x0)`.
pub fn estimate_u_star<R: StochasticRecursion>(
    rec: &R,
    payoff: &Payoff<'_, R::State>,
    x0: &R::State,
    n_paths: usize,
    rng: &RngStream,
) -> Result<DerivativeEstimate, SimError> {
    let s = random_horizon_samples(rec, payoff, x0, n_paths, rng)?;
    let u: Vec<f64> = s.iter().map(|p| p.0).collect();
    DerivativeEstimate::from_samples(&u, "mc-u-star")
}

/// Estimate `d/dtheta u*(theta, x0)` at `theta0` by score times reward-to-go.
pub fn estimate_u_star_derivative<R: StochasticRecursion>(
    rec: &R,
    payoff: &Payoff<'_, R::State>,
    x0: &R::State,
    n_paths: usize,
    rng: &RngStream,
) -> Result<DerivativeEstimate, SimError> {
    let s = random_horizon_samples(rec, payoff, x0, n_paths, rng)?;
    let d: Vec<f64> = s.iter().map(|p| p.1).collect();
    DerivativeEstimate::from_samples(&d, "mc-score-u-star")
}

/// Sum of `f(X_j) - c` for `j < tau` and `tau`, where `tau` is the first
/// `n >= min_n` with `X_n` in the atom.
fn cycle<R: StochasticRecursion>(
    rec: &R,
    f: &(dyn Fn(&R::State) -> f64 + Sync),
    atom: &(dyn Fn(&R::State) -> bool + Sync),
    c: f64,
    x: &R::State,
    min_n: usize,
    r: &mut crate::SimRng,
) -> Result<(f64, usize), SimError> {
    let cap = rec.path_cap();
    let mut x = x.clone();
    let mut sum = 0.0;
    let mut n = 0usize;
    loop {
        if n >= min_n && atom(&x) {
            return Ok((sum, n));
        }
        if n >= cap {
            return Err(SimError::Truncation { cap });
        }
        sum += f(&x) - c;
        let z = rec.sample_noise(r);
        x = rec.update(&x, &z);
        n += 1;
    }
}

/// Cycle sums `sum_{j < tau} f(X_j)` and lengths `tau` of `n_cycles`
/// independent cycles started at the regeneration state.
pub fn regenerative_cycles<R: StochasticRecursion>(
    rec: &R,
    f: &(dyn Fn(&R::State) -> f64 + Sync),
    regen: &Regeneration<'_, R::State>,
    n_cycles: usize,
    rng: &RngStream,
) -> Result<Vec<(f64, usize)>, SimError> {
    check_n(n_cycles, "n_cycles")?;
    if !(regen.atom)(&regen.state) {
        return Err(SimError::InvalidInput(
            "the regeneration state must lie in the atom".into(),
        ));
    }
    let base = rng.substream(PHASE_PI);
    par_map(n_cycles, |i| {
        let mut r = base.substream(i as u64).rng();
        cycle(rec, f, regen.atom, 0.0, &regen.state, 1, &mut r)
    })
}

/// Estimate `pi f` by the regenerative ratio over `n_cycles` cycles started at
/// the regeneration state.
pub fn estimate_pi_f<R: StochasticRecursion>(
    rec: &R,
    f: &(dyn Fn(&R::State) -> f64 + Sync),
    regen: &Regeneration<'_, R::State>,
    n_cycles: usize,
    rng: &RngStream,
) -> Result<RatioEstimate, SimError> {
    let cycles = regenerative_cycles(rec, f, regen, n_cycles, rng)?;
    let sums: Vec<f64> = cycles.iter().map(|c| c.0).collect();
    let lens: Vec<f64> = cycles.iter().map(|c| c.1 as f64).collect();
    RatioEstimate::from_cycles(&sums, &lens)
}

/// Regenerative estimate of the Poisson solution at one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub estimate: DerivativeEstimate,
    pub mean_cycle_length: f64,
    /// `SE(pi f) * E_x tau`, the first-order effect of the plug-in error in `pi f`.
    pub bias_bound: f64,
}

/// Estimate `g(x) = E_x sum_{j < tau} (f(X_j) - pi f)` with `tau` the first
/// `n >= 0` in the atom. `g` vanishes on the atom.
pub fn estimate_gamma_regenerative<R: StochasticRecursion>(
    rec: &R,
    f: &(dyn Fn(&R::State) -> f64 + Sync),
    regen: &Regeneration<'_, R::State>,
    pi_f: &RatioEstimate,
    x: &R::State,
    n_cycles: usize,
    rng: &RngStream,
) -> Result<GammaEstimate, SimError> {
    check_n(n_cycles, "n_cycles")?;
    let base = rng.substream(PHASE_PATHS);
    let cycles = par_map(n_cycles, |i| {
        let mut r = base.substream(i as u64).rng();
        cycle(rec, f, regen.atom, pi_f.point, x, 0, &mut r)
    })?;
    let sums: Vec<f64> = cycles.iter().map(|c| c.0).collect();
    let lens: Vec<f64> = cycles.iter().map(|c| c.1 as f64).collect();
    let tau = mean(&lens);
    Ok(GammaEstimate {
        estimate: DerivativeEstimate::from_samples(&sums, "regenerative-gamma")?,
        mean_cycle_length: tau,
        bias_bound: pi_f.std_error * tau,
    })
}

/// Output of [`estimate_stationary_derivative`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDerivativeEstimate {
    /// Outer-sample mean of `p'(theta0, Z_1) * gamma_hat(X_1)` and its SE.
    pub estimate: DerivativeEstimate,
    pub pi_f: RatioEstimate,
    /// `SE(pi f) * mean |p'(theta0, Z_1)| tau(X_1)`: first-order size of the
    /// bias from plugging in the estimated `pi f`. Reported, not corrected.
    pub inner_bias_bound: f64,
    pub mean_inner_cycle: f64,
}

/// Two-phase estimate of `d/dtheta pi(theta) f` at `theta0`.
///
/// Phase one estimates `pi f` from `n_cycles` regenerative cycles. Phase two
/// draws `n_outer` states by running `warmup` steps from the regeneration
/// state, takes one more step `X_1 = r(X, Z_1)`, and averages
/// `p'(theta0, Z_1) * gamma_hat(X_1)`, where `gamma_hat` is a single
/// regenerative cycle from `X_1`.
pub fn estimate_stationary_derivative<R: StochasticRecursion>(
    rec: &R,
    f: &(dyn Fn(&R::State) -> f64 + Sync),
    regen: &Regeneration<'_, R::State>,
    n_outer: usize,
    n_cycles: usize,
    warmup: usize,
    rng: &RngStream,
) -> Result<StationaryDerivativeEstimate, SimError> {
    check_n(n_outer, "n_outer")?;
    let pi_f = estimate_pi_f(rec, f, regen, n_cycles, rng)?;
    let theta0 = rec.theta0();
    let base = rng.substream(PHASE_OUTER);
    let outer = par_map(n_outer, |i| {
        let mut r = base.substream(i as u64).rng();
        let mut x = regen.state.clone();
        for _ in 0..warmup {
            let z = rec.sample_noise(&mut r);
            x = rec.update(&x, &z);
        }
        let z1 = rec.sample_noise(&mut r);
        let s = rec.score(theta0, &z1);
        let x1 = rec.update(&x, &z1);
        let (g, tau) = cycle(rec, f, regen.atom, pi_f.point, &x1, 0, &mut r)?;
        Ok((s * g, s.abs() * tau as f64, tau as f64))
    })?;
    let values: Vec<f64> = outer.iter().map(|o| o.0).collect();
    let weights: Vec<f64> = outer.iter().map(|o| o.1).collect();
    let taus: Vec<f64> = outer.iter().map(|o| o.2).collect();
    Ok(StationaryDerivativeEstimate {
        estimate: DerivativeEstimate::from_samples(&values, "regenerative-score")?,
        inner_bias_bound: pi_f.std_error * mean(&weights),
        mean_inner_cycle: mean(&taus),
        pi_f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    fn from_slack(slack: f64, se: f64) -> Self {
        if slack - 3.0 * se > 0.0 {
            Verdict::Pass
        } else if slack + 3.0 * se < 0.0 {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }

    fn worst(a: Self, b: Self) -> Self {
        use Verdict::*;
        match (a, b) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

/// Monte Carlo estimate of one side-difference (right minus left side).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlackEstimate {
    pub theta: Option<f64>,
    pub slack: f64,
    pub std_error: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport<S> {
    pub state: S,
    /// Zeroth-order condition at each `theta` of the grid.
    pub zeroth: Vec<SlackEstimate>,
    /// First-order condition with the score envelope.
    pub first: SlackEstimate,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecursionLyapunovReport<S> {
    pub n_mc: usize,
    pub probes: Vec<ProbeReport<S>>,
    pub verdict: Verdict,
}

fn slack_from_terms(constant: f64, terms: &[f64]) -> (f64, f64) {
    let n = terms.len() as f64;
    (constant - mean(terms), (sample_variance(terms) / n).sqrt())
}

/// Monte Carlo check of the Lyapunov conditions for a recursion at probe
/// states `x` in `C`:
///
/// * zeroth order: `e^{g(x)} E v0(r(x,Z)) p(theta,Z) 1_C <= v0(x) - |f~(theta,x)|`
///   for each `theta` in `theta_grid`, where
///   `f~(theta,x) = f(x) + e^{g(x)} E f(r(x,Z)) p(theta,Z) 1_{C^c}`;
/// * first order: `e^{g(x)} E [v1(r) 1_C + v0(r) w(Z) 1_C + |f(r)| w(Z) 1_{C^c}] <= v1(x)`,
///   with `w` the score envelope.
///
/// The same noise sample serves every `theta`. A probe passes when every slack
/// exceeds three standard errors, fails when one is below minus three SE, and is
/// inconclusive otherwise.
#[allow(clippy::too_many_arguments)]
pub fn check_recursion_lyapunov<R: StochasticRecursion>(
    rec: &R,
    v0: &(dyn Fn(&R::State) -> f64 + Sync),
    v1: &(dyn Fn(&R::State) -> f64 + Sync),
    payoff: &Payoff<'_, R::State>,
    theta_grid: &[f64],
    n_mc: usize,
    probes: &[R::State],
    rng: &RngStream,
) -> Result<RecursionLyapunovReport<R::State>, SimError> {
    check_n(n_mc, "n_mc")?;
    let base = rng.substream(PHASE_LYAPUNOV);
    let mut reports = Vec::with_capacity(probes.len());
    let mut overall = Verdict::Pass;
    for (k, x) in probes.iter().enumerate() {
        if !(payoff.interior)(x) {
            return Err(SimError::InvalidInput(
                "probe states must lie in the interior set C".into(),
            ));
        }
        let mut r = base.substream(k as u64).rng();
        let eg = payoff.exp_g(x);
        let mut zs = Vec::with_capacity(n_mc);
        let mut ys = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            let z = rec.sample_noise(&mut r);
            ys.push(rec.update(x, &z));
            zs.push(z);
        }
        let inside: Vec<bool> = ys.iter().map(|y| (payoff.interior)(y)).collect();
        let mut zeroth = Vec::with_capacity(theta_grid.len());
        let mut verdict = Verdict::Pass;
        for &theta in theta_grid {
            let p: Vec<f64> = zs.iter().map(|z| rec.density_ratio(theta, z)).collect();
            let exit: Vec<f64> = (0..n_mc)
                .map(|i| {
                    if inside[i] {
                        0.0
                    } else {
                        eg * (payoff.reward)(&ys[i]) * p[i]
                    }
                })
                .collect();
            let f_tilde = (payoff.reward)(x) + mean(&exit);
            let sign = if f_tilde < 0.0 { -1.0 } else { 1.0 };
            let terms: Vec<f64> = (0..n_mc)
                .map(|i| {
                    let cont = if inside[i] { eg * v0(&ys[i]) * p[i] } else { 0.0 };
                    cont + sign * exit[i]
                })
                .collect();
            let (slack, se) = slack_from_terms(v0(x) - sign * (payoff.reward)(x), &terms);
            let v = Verdict::from_slack(slack, se);
            verdict = Verdict::worst(verdict, v);
            zeroth.push(SlackEstimate {
                theta: Some(theta),
                slack,
                std_error: se,
                verdict: v,
            });
        }
        let mut terms = Vec::with_capacity(n_mc);
        for i in 0..n_mc {
            let w = rec
                .score_envelope(&zs[i])
                .ok_or_else(|| SimError::InvalidInput("the first-order check needs a score envelope".into()))?;
            let t = if inside[i] {
                v1(&ys[i]) + v0(&ys[i]) * w
            } else {
                (payoff.reward)(&ys[i]).abs() * w
            };
            terms.push(eg * t);
        }
        let (slack, se) = slack_from_terms(v1(x), &terms);
        let v = Verdict::from_slack(slack, se);
        verdict = Verdict::worst(verdict, v);
        overall = Verdict::worst(overall, verdict);
        reports.push(ProbeReport {
            state: x.clone(),
            zeroth,
            first: SlackEstimate {
                theta: None,
                slack,
                std_error: se,
                verdict: v,
            },
            verdict,
        });
    }
    Ok(RecursionLyapunovReport {
        n_mc,
        probes: reports,
        verdict: overall,
    })
}
