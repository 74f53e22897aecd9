//! Right-hand sides of the logarithmic stability bounds and their parameters.

use crate::error::{OuError, Result};
use crate::matops::AngleReport;

use super::gamma::gamma;

/// Free parameters of the weighted stability bound derived from `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParameters {
    /// Hölder exponent `p ∈ (1, 1/(1-ε))`.
    pub p: f64,
    /// Interpolation exponent `γ ∈ (0, 1 - 1/p)`.
    pub gamma: f64,
    /// `α = γ/p`.
    pub alpha: f64,
}

impl BoundParameters {
    /// Midpoint defaults `p = ½(1 + 1/(1-ε))`, `γ = ½(1 - 1/p)`.
    pub fn from_eps(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(OuError::InvalidArgument(format!("eps = {eps} must lie in (0, 1)")));
        }
        let p = 0.5 * (1.0 + 1.0 / (1.0 - eps));
        let gamma = 0.5 * (1.0 - 1.0 / p);
        Ok(Self { p, gamma, alpha: gamma / p })
    }
}

/// `K·(Γ(1/φ) / ((-c_ψ p log η)^{1/φ} φ))^α`.
pub fn stability_bound_analytic(eta: f64, angle: &AngleReport, p: f64, alpha: f64, k: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(OuError::DomainError(format!("observation norm η = {eta} must lie in (0, 1)")));
    }
    if !(p > 1.0) || !(alpha > 0.0 && alpha < 1.0) || !(k > 0.0) {
        return Err(OuError::InvalidArgument(format!(
            "need p > 1, α ∈ (0, 1), K > 0; got p = {p}, α = {alpha}, K = {k}"
        )));
    }
    let phi = angle.phi;
    let denom = (-angle.c_psi * p * eta.ln()).powf(1.0 / phi) * phi;
    Ok(k * (gamma(1.0 / phi) / denom).powf(alpha))
}

/// `-C / log(C₁η)`.
pub fn stability_bound_fractional(eta: f64, c: f64, c1: f64) -> Result<f64> {
    if !(c > 0.0 && c1 > 0.0) {
        return Err(OuError::InvalidArgument(format!("need C > 0 and C1 > 0, got {c}, {c1}")));
    }
    if !(eta > 0.0) || !(c1 * eta < 1.0) {
        return Err(OuError::DomainError(format!("need 0 < C1·η < 1, got C1·η = {}", c1 * eta)));
    }
    Ok(-c / (c1 * eta).ln())
}

/// `-(1+e^{-2})/log x - ((x-1)/log x + x)`, nonnegative on `(0, 1)` with a
/// double zero at `x = e^{-2}`.
pub fn elementary_inequality_gap(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(OuError::DomainError(format!("x = {x} must lie in (0, 1)")));
    }
    let l = x.ln();
    Ok(-(1.0 + (-2.0f64).exp()) / l - ((x - 1.0) / l + x))
}
