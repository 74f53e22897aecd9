//! One-dimensional quadrature: adaptive Simpson and Gauss–Legendre rules.

use crate::error::{OuError, Result};
use crate::matops::Matrix;

const MAX_DEPTH: u32 = 48;

/// Refinement stops once the Simpson correction is at the level of rounding.
const ROUNDOFF: f64 = 64.0 * f64::EPSILON;

/// Adaptive Simpson quadrature of a scalar integrand with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut worst = 0.0_f64;
    let v = simpson_rec(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut worst);
    if worst > 0.0 {
        return Err(OuError::QuadratureNonConvergence { tol, estimate: worst });
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || delta.abs() <= ROUNDOFF * (left.abs() + right.abs()) {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *worst = worst.max(delta.abs() / 15.0);
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, worst)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, worst)
}

/// Adaptive Simpson for matrix-valued integrands; the error is measured in the max-entry norm.
pub fn adaptive_simpson_matrix<F: Fn(f64) -> Matrix>(f: F, a: f64, b: f64, tol: f64) -> Result<Matrix> {
    let fa = f(a);
    if a == b {
        return Ok(fa * 0.0);
    }
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (&fa + &fm * 4.0 + &fb) * ((b - a) / 6.0);
    let mut worst = 0.0_f64;
    let v = simpson_matrix_rec(&f, a, b, &fa, &fm, &fb, &whole, tol, MAX_DEPTH, &mut worst);
    if worst > 0.0 {
        return Err(OuError::QuadratureNonConvergence { tol, estimate: worst });
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_matrix_rec<F: Fn(f64) -> Matrix>(
    f: &F,
    a: f64,
    b: f64,
    fa: &Matrix,
    fm: &Matrix,
    fb: &Matrix,
    whole: &Matrix,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> Matrix {
    let m = 0.5 * (a + b);
    let flm = f(0.5 * (a + m));
    let frm = f(0.5 * (m + b));
    let left = (fa + &flm * 4.0 + fm) * ((m - a) / 6.0);
    let right = (fm + &frm * 4.0 + fb) * ((b - m) / 6.0);
    let delta = &left + &right - whole;
    let err = delta.amax();
    let floor = ROUNDOFF * (left.amax() + right.amax());
    if err <= 15.0 * tol || err <= floor || depth == 0 {
        if err > 15.0 * tol && err > floor {
            *worst = worst.max(err / 15.0);
        }
        return left + right + delta / 15.0;
    }
    simpson_matrix_rec(f, a, m, fa, &flm, fm, &left, 0.5 * tol, depth - 1, worst)
        + simpson_matrix_rec(f, m, b, fm, &frm, fb, &right, 0.5 * tol, depth - 1, worst)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped onto [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (x.iter().map(|&xi| mid + half * xi).collect(), w.iter().map(|&wi| half * wi).collect())
}
