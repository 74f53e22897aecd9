//! Gamma and upper incomplete Gamma functions.

use std::f64::consts::PI;

use crate::error::{OuError, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const MAX_ITER: usize = 10_000;
const EPS: f64 = 1e-16;

/// `ln Γ(a)` for `a > 0`.
pub fn ln_gamma(a: f64) -> f64 {
    if a < 0.5 {
        (PI / (PI * a).sin()).ln() - ln_gamma(1.0 - a)
    } else {
        let a = a - 1.0;
        let mut x = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            x += c / (a + i as f64);
        }
        let t = a + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (a + 0.5) * t.ln() - t + x.ln()
    }
}

/// `Γ(a)`, with the reflection formula below ½.
pub fn gamma(a: f64) -> f64 {
    if a < 0.5 {
        PI / ((PI * a).sin() * gamma(1.0 - a))
    } else {
        let a = a - 1.0;
        let mut x = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            x += c / (a + i as f64);
        }
        let t = a + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powf(a + 0.5) * (-t).exp() * x
    }
}

/// Upper incomplete Gamma `Γ(a, x) = ∫ₓ^∞ t^{a-1} e^{-t} dt`: series for
/// `x < a + 1`, Lentz continued fraction otherwise.
pub fn incomplete_gamma(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(OuError::DomainError(format!("incomplete Gamma needs a > 0, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(OuError::DomainError(format!("incomplete Gamma needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(gamma(a));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let log_prefactor = a * x.ln() - x;
    if x < a + 1.0 {
        // γ(a, x) = x^a e^{-x} Σ xⁿ / (a(a+1)…(a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                return Ok(gamma(a) - sum * log_prefactor.exp());
            }
        }
        Err(OuError::QuadratureNonConvergence { tol: EPS, estimate: term / sum })
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                return Ok(h * log_prefactor.exp());
            }
        }
        Err(OuError::QuadratureNonConvergence { tol: EPS, estimate: h })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;

    #[test]
    fn known_values() {
        assert!((incomplete_gamma(1.0, 2.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!((gamma(2.0) - 1.0).abs() < 1e-14);
        assert!((gamma(5.0) - 24.0).abs() < 1e-12);
        assert_eq!(incomplete_gamma(2.5, 0.0).unwrap(), gamma(2.5));
        assert!(incomplete_gamma(0.0, 1.0).is_err());
        assert!(incomplete_gamma(1.0, -1.0).is_err());
    }

    #[test]
    fn gamma_half_against_quadrature() {
        // Γ(½) = 2∫₀^∞ e^{-u²} du after t = u².
        let oracle = 2.0 * adaptive_simpson(|u| (-u * u).exp(), 0.0, 40.0, 1e-15).unwrap();
        assert!((gamma(0.5) - oracle).abs() < 1e-13);
        assert!((gamma(0.5) - 1.772_453_850_905_516).abs() < 1e-14);
    }

    #[test]
    fn incomplete_against_quadrature() {
        for &(a, x) in &[(0.5, 0.3), (2.3, 1.0), (3.0, 7.5), (7.0, 2.0), (1.7, 12.0)] {
            let f = |t: f64| t.powf(a - 1.0) * (-t).exp();
            let oracle = adaptive_simpson(f, x, x + 80.0, 1e-14).unwrap();
            let v = incomplete_gamma(a, x).unwrap();
            assert!((v - oracle).abs() < 1e-11 * oracle, "a={a} x={x}: {v} vs {oracle}");
        }
    }

    #[test]
    fn ln_gamma_consistent() {
        for a in [0.1, 0.7, 1.0, 3.3, 9.9] {
            assert!((ln_gamma(a) - gamma(a).ln()).abs() < 1e-12);
        }
    }
}
