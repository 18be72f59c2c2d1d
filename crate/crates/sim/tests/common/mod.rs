#![allow(dead_code)]

use lyapsens_core::param_family::builtin;
use lyapsens_core::{FiniteFunction, ParamKernelFamily, StateSubset, TargetProblem, WeightFunction};
use lyapsens_sim::FiniteChainRecursion;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Softmax-tilted chain with strictly positive entries.
pub fn softmax_family(seed: u64, n: usize, theta0: f64, eps: f64) -> ParamKernelFamily {
    let mut r = rng(seed);
    let w = DMatrix::from_fn(n, n, |_, _| r.random_range(0.1..1.0));
    let s = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    builtin::softmax_tilt(w, s, theta0, eps).unwrap()
}

/// Exit problem on a 6-state chain: interior `{0, 1, 2, 3}`, random reward and
/// mild discounting, with the chain embedded as a recursion.
pub struct RhInstance {
    pub rec: FiniteChainRecursion,
    pub problem: TargetProblem,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub interior: usize,
}

pub fn rh_instance(seed: u64) -> RhInstance {
    let n = 6;
    let c = 4;
    let fam = softmax_family(seed, n, 0.2, 0.1);
    let mut r = rng(seed ^ 0x51ed);
    let f: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| r.random_range(-0.3..0.0)).collect();
    let problem = TargetProblem::new(
        fam.clone(),
        StateSubset::new(n, (0..c).collect()).unwrap(),
        FiniteFunction::new(f.clone()).unwrap(),
        FiniteFunction::new(g.clone()).unwrap(),
    )
    .unwrap();
    RhInstance {
        rec: FiniteChainRecursion::new(fam, 21).unwrap(),
        problem,
        f,
        g,
        interior: c,
    }
}

impl RhInstance {
    pub fn exact_u(&self) -> Vec<f64> {
        let w = WeightFunction::constant(self.f.len());
        self.problem
            .compute_u_star(self.problem.theta0(), &w)
            .unwrap()
            .as_slice()
            .to_vec()
    }

    pub fn exact_derivative(&self) -> Vec<f64> {
        let w = WeightFunction::constant(self.f.len());
        self.problem.derivative_u_star(&w).unwrap().as_slice().to_vec()
    }
}
