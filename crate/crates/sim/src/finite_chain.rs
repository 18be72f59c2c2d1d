//! A finite parameterized chain written as a stochastic recursion.
//!
//! The noise is a vector `Z = (Z_x)` with one independent draw `Z_x ~ P(theta, x, .)`
//! per state and `r(x, Z) = Z_x`. The theta-dependence then sits entirely in the
//! noise law, with `p(theta, Z) = prod_x k(theta, x, Z_x)` and, at `theta0`,
//! `p'(theta0, Z) = sum_x k'(theta0, x, Z_x)`.

use std::sync::RwLock;

use lyapsens_core::ParamKernelFamily;
use nalgebra::DMatrix;
use rand::Rng;

use crate::recursion::StochasticRecursion;
use crate::rng::SimRng;
use crate::SimError;

pub struct FiniteChainRecursion {
    family: ParamKernelFamily,
    cumulative: Vec<Vec<f64>>,
    last_support: Vec<usize>,
    score0: DMatrix<f64>,
    envelope_density: Vec<DMatrix<f64>>,
    envelope_score: Vec<DMatrix<f64>>,
    cache: RwLock<Vec<KernelPair>>,
}

/// `(theta, K_theta, K'_theta)`
type KernelPair = (f64, DMatrix<f64>, DMatrix<f64>);

impl std::fmt::Debug for FiniteChainRecursion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiniteChainRecursion")
            .field("family", &self.family.name())
            .field("size", &self.family.size())
            .finish()
    }
}

impl FiniteChainRecursion {
    /// Embed `family`; the score envelope is a maximum over `envelope_grid`
    /// equally spaced values of the band around `theta0`.
    pub fn new(family: ParamKernelFamily, envelope_grid: usize) -> Result<Self, SimError> {
        let n = family.size();
        let p = family.base().entries().clone();
        let mut cumulative = Vec::with_capacity(n);
        let mut last_support = Vec::with_capacity(n);
        for x in 0..n {
            let mut acc = 0.0;
            let mut row = Vec::with_capacity(n);
            let mut last = 0;
            for y in 0..n {
                acc += p[(x, y)];
                row.push(acc);
                if p[(x, y)] > 0.0 {
                    last = y;
                }
            }
            cumulative.push(row);
            last_support.push(last);
        }
        let score0 = Self::ratio_matrices(&family, family.theta0())?.1;
        let mut envelope_density = Vec::new();
        let mut envelope_score = Vec::new();
        for theta in family.grid(envelope_grid.max(3)) {
            let (k, kp) = Self::ratio_matrices(&family, theta)?;
            envelope_density.push(k);
            envelope_score.push(kp);
        }
        Ok(Self {
            family,
            cumulative,
            last_support,
            score0,
            envelope_density,
            envelope_score,
            cache: RwLock::new(Vec::new()),
        })
    }

    pub fn family(&self) -> &ParamKernelFamily {
        &self.family
    }

    pub fn size(&self) -> usize {
        self.family.size()
    }

    fn ratio_matrices(family: &ParamKernelFamily, theta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), SimError> {
        let base = family.base().entries();
        let k = family.eval_kernel(theta)?.into_entries();
        let kp = family.derivative_kernel(1, theta)?.into_entries();
        let n = family.size();
        let mut d = DMatrix::zeros(n, n);
        let mut s = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                if base[(x, y)] > 0.0 {
                    d[(x, y)] = k[(x, y)] / base[(x, y)];
                    s[(x, y)] = kp[(x, y)] / base[(x, y)];
                }
            }
        }
        Ok((d, s))
    }

    fn matrices_at(&self, theta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(hit) = self.cache.read().expect("cache lock").iter().find(|e| e.0 == theta) {
            return (hit.1.clone(), hit.2.clone());
        }
        let (k, kp) = Self::ratio_matrices(&self.family, theta)
            .unwrap_or_else(|e| panic!("density ratio requested at theta = {theta}: {e}"));
        let mut cache = self.cache.write().expect("cache lock");
        if cache.len() < 256 {
            cache.push((theta, k.clone(), kp.clone()));
        }
        (k, kp)
    }

    fn product_and_derivative(k: &DMatrix<f64>, kp: &DMatrix<f64>, z: &[u32]) -> (f64, f64) {
        // d/dtheta prod_x k_x = sum_x k'_x prod_{y != x} k_y, computed without dividing
        let mut prod = 1.0;
        let mut deriv = 0.0;
        for (x, &y) in z.iter().enumerate() {
            let (a, b) = (k[(x, y as usize)], kp[(x, y as usize)]);
            deriv = deriv * a + prod * b;
            prod *= a;
        }
        (prod, deriv)
    }
}

impl StochasticRecursion for FiniteChainRecursion {
    type State = usize;
    type Noise = Box<[u32]>;

    fn theta0(&self) -> f64 {
        self.family.theta0()
    }

    fn sample_noise(&self, rng: &mut SimRng) -> Self::Noise {
        self.cumulative
            .iter()
            .zip(&self.last_support)
            .map(|(row, &last)| {
                let u: f64 = rng.random();
                let y = row.partition_point(|c| *c <= u);
                y.min(last) as u32
            })
            .collect()
    }

    fn update(&self, x: &usize, z: &Self::Noise) -> usize {
        z[*x] as usize
    }

    fn density_ratio(&self, theta: f64, z: &Self::Noise) -> f64 {
        if theta == self.theta0() {
            return 1.0;
        }
        let (k, kp) = self.matrices_at(theta);
        Self::product_and_derivative(&k, &kp, z).0
    }

    fn score(&self, theta: f64, z: &Self::Noise) -> f64 {
        if theta == self.theta0() {
            return z.iter().enumerate().map(|(x, &y)| self.score0[(x, y as usize)]).sum();
        }
        let (k, kp) = self.matrices_at(theta);
        Self::product_and_derivative(&k, &kp, z).1
    }

    fn score_envelope(&self, z: &Self::Noise) -> Option<f64> {
        Some(
            self.envelope_density
                .iter()
                .zip(&self.envelope_score)
                .map(|(k, kp)| Self::product_and_derivative(k, kp, z).1.abs())
                .fold(0.0, f64::max),
        )
    }
}
