use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
    pub z: f64,
    pub sigma: f64,
}

/// Delta-method interval `alpha_hat -+ z sigma / sqrt(n)` with
/// `sigma^2 = grad^2 C` and `z` the `1 - delta/2` normal quantile.
pub fn delta_ci(alpha_hat: f64, grad_hat: f64, c_hat: f64, n: u64, delta: f64) -> Result<ConfidenceInterval, CliError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CliError::Schema(format!("delta = {delta} must lie in (0, 1)")));
    }
    if n == 0 {
        return Err(CliError::Schema("sample size n must be positive".into()));
    }
    if !(c_hat >= 0.0) || !alpha_hat.is_finite() || !grad_hat.is_finite() || !c_hat.is_finite() {
        return Err(CliError::Schema(format!(
            "need finite alpha_hat, grad_hat and C_hat >= 0, got {alpha_hat}, {grad_hat}, {c_hat}"
        )));
    }
    let var = grad_hat * grad_hat * c_hat;
    if var <= 0.0 {
        return Err(CliError::Refusal(format!(
            "[variance] the interval requires grad C grad^T > 0, but grad^2 C = {var}"
        )));
    }
    let z = Normal::standard().inverse_cdf(1.0 - delta / 2.0);
    let sigma = var.sqrt();
    let half_width = z * sigma / (n as f64).sqrt();
    Ok(ConfidenceInterval {
        lower: alpha_hat - half_width,
        upper: alpha_hat + half_width,
        half_width,
        z,
        sigma,
    })
}
