use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use super::CoxError;

/// Two-sided Wald p-value, `2·(1 − Φ(|z|)) = erfc(|z|/√2)`.
pub fn wald_pvalue(z: f64) -> Result<f64, CoxError> {
    if !z.is_finite() {
        return Err(CoxError::NonFiniteZ);
    }
    Ok(erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0))
}

/// Standard normal quantile, for non-default confidence levels.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}
