//! Weighted function, measure and kernel spaces on a finite state space.
//!
//! A weight `w >= 1` induces the norms
//!
//! ```text
//! ||h||_w   = max_x |h(x)| / w(x)
//! |||Q|||_w = max_x (sum_y |Q(x,y)| w(y)) / w(x)
//! ||eta||_w = sum_x |eta(x)| w(x)
//! ```
//!
//! Functions act on the right of kernels and measures on the left, so
//! `apply(Q, h) = Q h` is a column product and `apply_measure(eta, Q) = eta Q`
//! is a row product. On a finite space the weighted absolute row sum is exactly
//! the operator norm induced by `||.||_w`; the equivalence is property tested.
//!
//! Resolvents `(I - K)^{-1} = sum_n K^n` are only formed after a contraction
//! check `|||K^m|||_w < 1` succeeds for some `m <= m_max`, and are then obtained
//! from a dense LU factorization that is kept for repeated solves.

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default search depth for [`contraction_power`].
pub const DEFAULT_M_MAX: usize = 64;

/// Tolerance used for the "stochastic" and "probability" refinements.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// An indexed finite state space with distinct labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("state space must have at least one state".into()));
        }
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate state label {:?}", w[0])));
        }
        if let Some(bad) = labels.iter().find(|l| l.contains(',') || l.contains('\n')) {
            return Err(Error::InvalidInput(format!(
                "state label {bad:?} contains a CSV delimiter"
            )));
        }
        Ok(Self { labels })
    }

    /// States labelled `0, 1, ..., n-1`.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()).collect())
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// A subset of `{0, .., n-1}`, stored as sorted distinct indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSubset {
    indices: Vec<usize>,
    universe: usize,
}

impl StateSubset {
    pub fn new(universe: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= universe) {
            return Err(Error::InvalidInput(format!(
                "subset index {bad} outside state space of size {universe}"
            )));
        }
        Ok(Self { indices, universe })
    }

    pub fn full(universe: usize) -> Self {
        Self {
            indices: (0..universe).collect(),
            universe,
        }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            indices: mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect(),
            universe: mask.len(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> Self {
        Self {
            indices: (0..self.universe).filter(|i| !self.contains(*i)).collect(),
            universe: self.universe,
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.universe];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }
}

/// A weight function `w: S -> [1, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction(DVector<f64>);

impl WeightFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("weight function over an empty space".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 1.0) {
            return Err(Error::InvalidInput(format!(
                "weight must be finite and >= 1, found w[{i}] = {v}"
            )));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn constant(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn restrict(&self, subset: &StateSubset) -> Self {
        Self(DVector::from_iterator(
            subset.len(),
            subset.indices().iter().map(|&i| self.0[i]),
        ))
    }
}

/// A real function on the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteFunction(DVector<f64>);

impl FiniteFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "function value h[{i}] = {v} is not finite"
            )));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(DVector::from_element(n, c))
    }

    pub fn from_vector(v: DVector<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn restrict(&self, subset: &StateSubset) -> Self {
        Self(DVector::from_iterator(
            subset.len(),
            subset.indices().iter().map(|&i| self.0[i]),
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.map(f))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A signed measure on the state space, acting on the left of kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure(DVector<f64>);

impl FiniteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = weights.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "measure weight eta[{i}] = {v} is not finite"
            )));
        }
        Ok(Self(DVector::from_vec(weights)))
    }

    /// A probability measure; weights must be nonnegative and sum to one.
    pub fn probability(weights: Vec<f64>) -> Result<Self> {
        let m = Self::new(weights)?;
        if !m.is_probability(STOCHASTIC_TOL) {
            return Err(Error::InvalidInput(
                "probability measure needs nonnegative weights summing to 1".into(),
            ));
        }
        Ok(m)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    /// Unit point mass at state `x`.
    pub fn dirac(n: usize, x: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[x] = 1.0;
        Self(v)
    }

    pub fn from_vector(v: DVector<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn total_mass(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        self.0.iter().all(|&v| v >= 0.0) && (self.total_mass() - 1.0).abs() <= tol
    }

    pub fn restrict(&self, subset: &StateSubset) -> Self {
        Self(DVector::from_iterator(
            subset.len(),
            subset.indices().iter().map(|&i| self.0[i]),
        ))
    }
}

/// A square kernel on the state space. `signed = false` asserts nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteKernel {
    entries: DMatrix<f64>,
    signed: bool,
}

impl FiniteKernel {
    /// A nonnegative kernel.
    pub fn nonnegative(entries: DMatrix<f64>) -> Result<Self> {
        Self::validate(&entries)?;
        if let Some(v) = entries.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "nonnegative kernel has a negative entry {v}"
            )));
        }
        Ok(Self { entries, signed: false })
    }

    /// A kernel whose entries may take either sign.
    pub fn signed(entries: DMatrix<f64>) -> Result<Self> {
        Self::validate(&entries)?;
        Ok(Self { entries, signed: true })
    }

    /// A nonnegative kernel whose rows sum to one.
    pub fn stochastic(entries: DMatrix<f64>) -> Result<Self> {
        let k = Self::nonnegative(entries)?;
        if let Some(row) = k.row_sums().iter().position(|s| (s - 1.0).abs() > STOCHASTIC_TOL) {
            return Err(Error::InvalidInput(format!(
                "row {row} of a stochastic kernel sums to {}",
                k.row_sums()[row]
            )));
        }
        Ok(k)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "kernel row length",
                expected: n,
                found: r.len(),
            });
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        if m.iter().any(|v| *v < 0.0) {
            Self::signed(m)
        } else {
            Self::nonnegative(m)
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            signed: false,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
            signed: false,
        }
    }

    fn validate(entries: &DMatrix<f64>) -> Result<()> {
        check_dim("kernel must be square", entries.nrows(), entries.ncols())?;
        if entries.nrows() == 0 {
            return Err(Error::InvalidInput("kernel over an empty space".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kernel has a non-finite entry".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[(x, y)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        !self.signed && self.row_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    /// The block `rows x cols` of the kernel, as an (in general non-square) matrix.
    pub fn block(&self, rows: &StateSubset, cols: &StateSubset) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            self.entries[(rows.indices()[i], cols.indices()[j])]
        })
    }

    /// The kernel restricted to `subset x subset`.
    pub fn restrict(&self, subset: &StateSubset) -> Self {
        Self {
            entries: self.block(subset, subset),
            signed: self.signed,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            entries: &self.entries * c,
            signed: self.signed || c < 0.0,
        }
    }

    /// Entry-wise sign-agnostic power `Q^m`.
    pub fn power(&self, m: usize) -> Self {
        let mut acc = DMatrix::identity(self.size(), self.size());
        for _ in 0..m {
            acc = &acc * &self.entries;
        }
        Self {
            entries: acc,
            signed: self.signed,
        }
    }
}

/// `max_x |h(x)| / w(x)`.
pub fn weighted_sup_norm(h: &FiniteFunction, w: &WeightFunction) -> Result<f64> {
    check_dim("weighted_sup_norm", w.len(), h.len())?;
    Ok(h.values()
        .iter()
        .zip(w.values().iter())
        .fold(0.0, |m, (hv, wv)| m.max(hv.abs() / wv)))
}

/// Induced operator norm `|||Q|||_w`, evaluated as the weighted absolute row sum.
pub fn operator_norm(q: &FiniteKernel, w: &WeightFunction) -> Result<f64> {
    check_dim("operator_norm", w.len(), q.size())?;
    Ok(matrix_operator_norm(q.entries(), w.values()))
}

pub(crate) fn matrix_operator_norm(q: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (0..q.nrows())
        .map(|x| {
            let s: f64 = (0..q.ncols()).map(|y| q[(x, y)].abs() * w[y]).sum();
            s / w[x]
        })
        .fold(0.0, f64::max)
}

/// `||eta||_w = sum_x |eta(x)| w(x)`.
pub fn measure_norm(eta: &FiniteMeasure, w: &WeightFunction) -> Result<f64> {
    check_dim("measure_norm", w.len(), eta.len())?;
    Ok(eta
        .values()
        .iter()
        .zip(w.values().iter())
        .map(|(e, wv)| e.abs() * wv)
        .sum())
}

/// Kernel composition `(Q1 Q2)(x, y) = sum_z Q1(x, z) Q2(z, y)`.
pub fn compose(q1: &FiniteKernel, q2: &FiniteKernel) -> Result<FiniteKernel> {
    check_dim("compose", q1.size(), q2.size())?;
    Ok(FiniteKernel {
        entries: q1.entries() * q2.entries(),
        signed: q1.is_signed() || q2.is_signed(),
    })
}

/// `(Q h)(x) = sum_y Q(x, y) h(y)`.
pub fn apply(q: &FiniteKernel, h: &FiniteFunction) -> Result<FiniteFunction> {
    check_dim("apply", q.size(), h.len())?;
    Ok(FiniteFunction(q.entries() * h.values()))
}

/// `(eta Q)(y) = sum_x eta(x) Q(x, y)`.
pub fn apply_measure(eta: &FiniteMeasure, q: &FiniteKernel) -> Result<FiniteMeasure> {
    check_dim("apply_measure", q.size(), eta.len())?;
    Ok(FiniteMeasure(q.entries().tr_mul(eta.values())))
}

/// `eta h = sum_x eta(x) h(x)`, summed in index order.
pub fn pair(eta: &FiniteMeasure, h: &FiniteFunction) -> Result<f64> {
    check_dim("pair", eta.len(), h.len())?;
    Ok(eta.values().iter().zip(h.values().iter()).map(|(a, b)| a * b).sum())
}

/// Outcome of searching for a contracting power of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionCheck {
    /// Smallest `m` with `|||Q^m|||_w < 1`, if one was found.
    pub power: Option<usize>,
    /// `|||Q^m|||_w` for `m = 1, 2, ..` up to the power found (or `m_max`).
    pub norms: Vec<f64>,
    pub m_max: usize,
}

impl ContractionCheck {
    pub fn passed(&self) -> bool {
        self.power.is_some()
    }

    /// The attained norm at the contracting power, if any.
    pub fn margin(&self) -> Option<f64> {
        self.power.map(|m| self.norms[m - 1])
    }

    pub fn into_result(self) -> Result<usize> {
        match self.power {
            Some(m) => Ok(m),
            None => Err(Error::ContractionInconclusive {
                m_max: self.m_max,
                norms: self.norms,
            }),
        }
    }
}

/// Smallest `m <= m_max` with `|||Q^m|||_w < 1`.
///
/// An absent result is inconclusive: it does not prove that no power contracts.
pub fn contraction_power(q: &FiniteKernel, w: &WeightFunction, m_max: usize) -> Result<ContractionCheck> {
    check_dim("contraction_power", w.len(), q.size())?;
    Ok(matrix_contraction_power(q.entries(), w.values(), m_max))
}

pub(crate) fn matrix_contraction_power(q: &DMatrix<f64>, w: &DVector<f64>, m_max: usize) -> ContractionCheck {
    let mut norms = Vec::new();
    let mut pow = q.clone();
    for m in 1..=m_max {
        let norm = matrix_operator_norm(&pow, w);
        norms.push(norm);
        if norm < 1.0 {
            return ContractionCheck {
                power: Some(m),
                norms,
                m_max,
            };
        }
        if !norm.is_finite() {
            break;
        }
        pow = &pow * q;
    }
    ContractionCheck {
        power: None,
        norms,
        m_max,
    }
}

/// Factorized `I - K` for a kernel that passed the contraction check.
///
/// Keeps LU factorizations of both `I - K` and its transpose, so that
/// `G h = (I - K)^{-1} h` and `eta G` each cost one pair of triangular solves.
#[derive(Debug, Clone)]
pub struct Resolvent {
    kernel: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    contraction: ContractionCheck,
}

impl Resolvent {
    pub fn new(k: &FiniteKernel, w: &WeightFunction, m_max: usize) -> Result<Self> {
        check_dim("resolvent weight", k.size(), w.len())?;
        Self::from_matrix(k.entries().clone(), w.values(), m_max)
    }

    pub(crate) fn from_matrix(k: DMatrix<f64>, w: &DVector<f64>, m_max: usize) -> Result<Self> {
        let contraction = matrix_contraction_power(&k, w, m_max);
        if !contraction.passed() {
            return Err(Error::ContractionInconclusive {
                m_max,
                norms: contraction.norms,
            });
        }
        let n = k.nrows();
        let a = DMatrix::identity(n, n) - &k;
        let lu = LU::new(a.clone());
        if !lu.is_invertible() {
            return Err(Error::Numerical("I - K is singular".into()));
        }
        let lu_t = LU::new(a.transpose());
        Ok(Self {
            kernel: k,
            lu,
            lu_t,
            contraction,
        })
    }

    pub fn size(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn contraction(&self) -> &ContractionCheck {
        &self.contraction
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// `G h` for a raw vector.
    pub fn solve_vec(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("resolvent solve", self.size(), h.len())?;
        self.lu
            .solve(h)
            .ok_or_else(|| Error::Numerical("triangular solve against I - K failed".into()))
    }

    /// `eta G` for a raw row vector (stored as a column).
    pub fn solve_left_vec(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("resolvent left solve", self.size(), eta.len())?;
        self.lu_t
            .solve(eta)
            .ok_or_else(|| Error::Numerical("triangular solve against (I - K)^T failed".into()))
    }

    pub fn solve(&self, f: &FiniteFunction) -> Result<FiniteFunction> {
        self.solve_vec(f.values()).map(FiniteFunction)
    }

    pub fn solve_left(&self, eta: &FiniteMeasure) -> Result<FiniteMeasure> {
        self.solve_left_vec(eta.values()).map(FiniteMeasure)
    }

    /// The full matrix `G = (I - K)^{-1}`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.size();
        self.lu
            .solve(&DMatrix::identity(n, n))
            .expect("factorization was checked invertible")
    }
}

/// Solve `(I - K) u = f` after checking `|||K^m|||_w < 1` for some `m <= DEFAULT_M_MAX`.
pub fn resolvent_solve(k: &FiniteKernel, f: &FiniteFunction, w: &WeightFunction) -> Result<FiniteFunction> {
    check_dim("resolvent_solve", k.size(), f.len())?;
    Resolvent::new(k, w, DEFAULT_M_MAX)?.solve(f)
}
