#![allow(dead_code)]

use lyapsens_core::param_family::builtin;
use lyapsens_core::{FiniteFunction, FiniteKernel, ParamKernelFamily, StateSubset, TargetProblem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(lo..hi))
}

/// Row-normalized softmax tilt with strictly positive weights (irreducible, aperiodic).
pub fn softmax_family(seed: u64, n: usize, theta0: f64, eps: f64) -> ParamKernelFamily {
    let mut r = rng(seed);
    let w = uniform_matrix(&mut r, n, 0.1, 1.0);
    let s = uniform_matrix(&mut r, n, -1.0, 1.0);
    builtin::softmax_tilt(w, s, theta0, eps).unwrap()
}

/// Random substochastic kernel with row sums `total` and a zero pattern.
pub fn sparse_stochastic(rng: &mut ChaCha8Rng, n: usize, total: f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |_, _| {
        if rng.random_bool(0.7) {
            rng.random_range(0.05..1.0)
        } else {
            0.0
        }
    });
    for x in 0..n {
        if m.row(x).sum() == 0.0 {
            m[(x, (x + 1) % n)] = 1.0;
        }
        let s = m.row(x).sum();
        for y in 0..n {
            m[(x, y)] *= total / s;
        }
    }
    m
}

/// Random exit problem: softmax chain, interior = first `c` states, mild discounting.
pub fn random_problem(seed: u64, n: usize, c: usize) -> TargetProblem {
    let fam = softmax_family(seed, n, 0.2, 0.1);
    let mut r = rng(seed ^ 0x9e37);
    let f = FiniteFunction::new((0..n).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
    let g = FiniteFunction::new((0..n).map(|_| r.random_range(-0.3..0.0)).collect()).unwrap();
    TargetProblem::new(fam, StateSubset::new(n, (0..c).collect()).unwrap(), f, g).unwrap()
}

/// Random problem with an unnormalized exponential tilt on a sparse base.
pub fn random_tilt_problem(seed: u64, n: usize, c: usize) -> TargetProblem {
    let mut r = rng(seed);
    let base = FiniteKernel::nonnegative(sparse_stochastic(&mut r, n, 0.9)).unwrap();
    let s = uniform_matrix(&mut r, n, -1.0, 1.0);
    let fam = builtin::exponential_tilt(base, s, 0.0, 0.1).unwrap();
    let f = FiniteFunction::new((0..n).map(|_| r.random_range(-1.0..3.0)).collect()).unwrap();
    TargetProblem::undiscounted(fam, StateSubset::new(n, (0..c).collect()).unwrap(), f).unwrap()
}
