//! Sample summaries with fixed-order (pairwise) summation.

use serde::Serialize;

use crate::SimError;

/// Pairwise sum; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample variance with the `n - 1` divisor; zero for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Point estimate with standard error `sd / sqrt(n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    pub point: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub method: String,
}

impl DerivativeEstimate {
    pub fn from_samples(samples: &[f64], method: impl Into<String>) -> Result<Self, SimError> {
        if samples.is_empty() {
            return Err(SimError::InvalidInput("an estimate needs at least one sample".into()));
        }
        let n = samples.len();
        Ok(Self {
            point: mean(samples),
            std_error: (sample_variance(samples) / n as f64).sqrt(),
            n_samples: n,
            method: method.into(),
        })
    }

    /// `(point - target) / std_error`; infinite when the SE is zero and the point misses.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.point - target;
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }

    /// `|point - target| <= k * SE`.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.point - target).abs() <= k * self.std_error
    }

    /// Agreement within `k` combined standard errors.
    pub fn agrees_with_estimate(&self, other: &DerivativeEstimate, k: f64) -> bool {
        let se = self.std_error.hypot(other.std_error);
        (self.point - other.point).abs() <= k * se
    }
}

/// Regenerative ratio estimate `sum Y / sum tau` with a delta-method SE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub point: f64,
    pub std_error: f64,
    pub n_cycles: usize,
    pub mean_cycle_length: f64,
}

impl RatioEstimate {
    /// A known value with zero uncertainty.
    pub fn exact(value: f64) -> Self {
        Self {
            point: value,
            std_error: 0.0,
            n_cycles: 0,
            mean_cycle_length: f64::NAN,
        }
    }

    pub fn from_cycles(sums: &[f64], lengths: &[f64]) -> Result<Self, SimError> {
        if sums.is_empty() || sums.len() != lengths.len() {
            return Err(SimError::InvalidInput(
                "ratio estimate needs matching nonempty cycle data".into(),
            ));
        }
        let n = sums.len();
        let tau = mean(lengths);
        let r = pairwise_sum(sums) / pairwise_sum(lengths);
        let resid: Vec<f64> = sums.iter().zip(lengths).map(|(y, t)| y - r * t).collect();
        let se = (sample_variance(&resid) / n as f64).sqrt() / tau;
        Ok(Self {
            point: r,
            std_error: se,
            n_cycles: n,
            mean_cycle_length: tau,
        })
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Two-sample Welch t statistic.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let va = sample_variance(a) / a.len() as f64;
    let vb = sample_variance(b) / b.len() as f64;
    (mean(a) - mean(b)) / (va + vb).sqrt()
}
