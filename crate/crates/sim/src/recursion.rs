//! Stochastic recursions and path simulation.

use std::fmt;

use crate::rng::{RngStream, SimRng};
use crate::SimError;

/// Default hard cap on the number of steps in one path.
pub const DEFAULT_PATH_CAP: usize = 10_000_000;

/// A Markov chain `X_{n+1} = r(X_n, Z_{n+1})` with i.i.d. noise `Z`.
///
/// The noise is sampled under `theta0`; the law under `theta` has density
/// `p(theta, z)` relative to it, so `p(theta0, z) = 1`. Implementations must be
/// pure: the same noise and state always give the same next state.
pub trait StochasticRecursion: Sync {
    type State: Clone + Send + Sync;
    type Noise: Clone + Send + Sync;

    fn theta0(&self) -> f64;
    fn sample_noise(&self, rng: &mut SimRng) -> Self::Noise;
    fn update(&self, x: &Self::State, z: &Self::Noise) -> Self::State;
    /// `p(theta, z)`.
    fn density_ratio(&self, theta: f64, z: &Self::Noise) -> f64;
    /// `p'(theta, z)`, the derivative in `theta`.
    fn score(&self, theta: f64, z: &Self::Noise) -> f64;
    /// `sup_{|theta - theta0| < eps} |p'(theta, z)|`, if the model provides one.
    fn score_envelope(&self, _z: &Self::Noise) -> Option<f64> {
        None
    }
    fn path_cap(&self) -> usize {
        DEFAULT_PATH_CAP
    }
}

/// The same dynamics with the parameter removed: `p = 1`, `p' = 0`.
#[derive(Debug, Clone)]
pub struct ThetaIndependent<R>(pub R);

impl<R: StochasticRecursion> StochasticRecursion for ThetaIndependent<R> {
    type State = R::State;
    type Noise = R::Noise;

    fn theta0(&self) -> f64 {
        self.0.theta0()
    }
    fn sample_noise(&self, rng: &mut SimRng) -> Self::Noise {
        self.0.sample_noise(rng)
    }
    fn update(&self, x: &Self::State, z: &Self::Noise) -> Self::State {
        self.0.update(x, z)
    }
    fn density_ratio(&self, _theta: f64, _z: &Self::Noise) -> f64 {
        1.0
    }
    fn score(&self, _theta: f64, _z: &Self::Noise) -> f64 {
        0.0
    }
    fn score_envelope(&self, _z: &Self::Noise) -> Option<f64> {
        Some(0.0)
    }
    fn path_cap(&self) -> usize {
        self.0.path_cap()
    }
}

/// Overrides the path cap of a recursion.
#[derive(Debug, Clone)]
pub struct Capped<R> {
    pub inner: R,
    pub cap: usize,
}

impl<R: StochasticRecursion> StochasticRecursion for Capped<R> {
    type State = R::State;
    type Noise = R::Noise;

    fn theta0(&self) -> f64 {
        self.inner.theta0()
    }
    fn sample_noise(&self, rng: &mut SimRng) -> Self::Noise {
        self.inner.sample_noise(rng)
    }
    fn update(&self, x: &Self::State, z: &Self::Noise) -> Self::State {
        self.inner.update(x, z)
    }
    fn density_ratio(&self, theta: f64, z: &Self::Noise) -> f64 {
        self.inner.density_ratio(theta, z)
    }
    fn score(&self, theta: f64, z: &Self::Noise) -> f64 {
        self.inner.score(theta, z)
    }
    fn score_envelope(&self, z: &Self::Noise) -> Option<f64> {
        self.inner.score_envelope(z)
    }
    fn path_cap(&self) -> usize {
        self.cap
    }
}

/// When a path ends.
pub enum Stop<'a, S> {
    /// After exactly this many steps.
    Horizon(usize),
    /// At the first `n >= 0` with `pred(X_n)`.
    Hitting(&'a dyn Fn(&S) -> bool),
    /// At the first `n >= 1` with `pred(X_n)`.
    Return(&'a dyn Fn(&S) -> bool),
}

/// States `X_0..=X_T` and the noises `Z_1..=Z_T` that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<S, Z> {
    pub states: Vec<S>,
    pub noises: Vec<Z>,
}

impl<S, Z> Path<S, Z> {
    pub fn len(&self) -> usize {
        self.noises.len()
    }
    pub fn is_empty(&self) -> bool {
        self.noises.is_empty()
    }
}

/// The cap was reached; `partial` holds the path simulated so far.
#[derive(Debug, Clone)]
pub struct PathTruncated<S, Z> {
    pub cap: usize,
    pub partial: Path<S, Z>,
}

impl<S, Z> fmt::Display for PathTruncated<S, Z> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "path truncated after {} steps", self.cap)
    }
}

impl<S: fmt::Debug, Z: fmt::Debug> std::error::Error for PathTruncated<S, Z> {}

impl<S, Z> From<PathTruncated<S, Z>> for SimError {
    fn from(e: PathTruncated<S, Z>) -> Self {
        SimError::Truncation { cap: e.cap }
    }
}

/// A full path, or the truncated prefix when the cap was hit.
pub type SimulatedPath<R> = Result<
    Path<<R as StochasticRecursion>::State, <R as StochasticRecursion>::Noise>,
    PathTruncated<<R as StochasticRecursion>::State, <R as StochasticRecursion>::Noise>,
>;

/// Simulate one path from `x0` under `theta0`, keeping the noise draws.
pub fn simulate_path<R: StochasticRecursion>(
    rec: &R,
    x0: R::State,
    stop: Stop<'_, R::State>,
    rng: &RngStream,
) -> SimulatedPath<R> {
    let cap = rec.path_cap();
    let mut r = rng.rng();
    let mut path = Path {
        states: vec![x0],
        noises: Vec::new(),
    };
    loop {
        let n = path.noises.len();
        let x = path.states.last().expect("path is nonempty");
        let done = match &stop {
            Stop::Horizon(h) => n >= *h,
            Stop::Hitting(pred) => pred(x),
            Stop::Return(pred) => n >= 1 && pred(x),
        };
        if done {
            return Ok(path);
        }
        if n >= cap {
            return Err(PathTruncated { cap, partial: path });
        }
        let z = rec.sample_noise(&mut r);
        let next = rec.update(x, &z);
        path.noises.push(z);
        path.states.push(next);
    }
}
