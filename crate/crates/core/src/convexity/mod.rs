//! Convexity constants and numerical checks of the logarithmic-convexity
//! estimates of the fractional (Lebesgue) and weighted (Gaussian) semigroups.
//!
//! The averaged symbol is `β(t,ξ) = (1/t)∫₀ᵗ |Q^{½} e^{τBᵀ} ξ|^{2s} dτ`, with
//! limit `|Q^{½}ξ|^{2s}` at `t = 0`. Its extrema `c₁ ≤ c₂` over
//! `[0,T] × S^{N-1}` give the exponent `c = c₁/c₂` of the Lebesgue estimate.

pub mod bounds;
pub mod gamma;

use std::f64::consts::PI;

use rayon::prelude::*;

pub use bounds::{elementary_inequality_gap, stability_bound_analytic, stability_bound_fractional, BoundParameters};
pub use gamma::{gamma, incomplete_gamma, ln_gamma};

use crate::error::{OuError, Result};
use crate::field::{invariant_density, norm_l2, norm_l2_mu, Field, GridSpec};
use crate::matops::{analyticity_angle, AngleReport, OuModel};
use crate::quad::gauss_legendre;
use crate::semigroup::{
    propagate_kolmogorov, signed_symbol_integral, symbol_density, FourierPropagator, PropagatorConfig,
};

/// Below this time `β` uses its first-order expansion at `t = 0`.
pub const BETA_SMALL_T: f64 = 1e-8;

/// Norms below this value are treated as underflowed.
pub const NORM_UNDERFLOW: f64 = 1e-280;

const BETA_TOL: f64 = 1e-14;
const STEP_GL_POINTS: usize = 8;
const GOLDEN_ITERS: usize = 80;
const POLISH_ROUNDS: usize = 4;

/// `∫₀ᵗ |Q^{½} e^{τBᵀ} ξ|^{2s} dτ`, the exponent governing `‖u(t)‖` in the
/// norm identity; equals `t·β(t, ξ)` and is homogeneous of degree `2s` in `ξ`.
pub fn norm_symbol_integral(model: &OuModel, t: f64, xi: &[f64]) -> Result<f64> {
    signed_symbol_integral(model, t, xi, BETA_TOL, -1.0)
}

/// `β(t, ξ)` for a unit vector `ξ`.
pub fn beta(model: &OuModel, t: f64, xi_unit: &[f64]) -> Result<f64> {
    if xi_unit.len() != model.dim() {
        return Err(OuError::InvalidArgument("direction has the wrong dimension".into()));
    }
    let len2: f64 = xi_unit.iter().map(|v| v * v).sum();
    if (len2.sqrt() - 1.0).abs() > 1e-12 {
        return Err(OuError::InvalidArgument(format!("|ξ| = {} is not 1", len2.sqrt())));
    }
    if !(t >= 0.0) {
        return Err(OuError::InvalidArgument(format!("time t = {t} must be >= 0")));
    }
    if t < BETA_SMALL_T {
        return Ok(beta_expansion(model, t, xi_unit));
    }
    Ok(norm_symbol_integral(model, t, xi_unit)? / t)
}

/// `f(0) + ½t f'(0)` with `f(τ) = (ξᵀ e^{τB} Q e^{τBᵀ} ξ)^s`.
fn beta_expansion(model: &OuModel, t: f64, xi: &[f64]) -> f64 {
    let n = model.dim();
    let q = model.q();
    let b = model.b();
    let mut q0 = 0.0;
    let mut q1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            q0 += xi[i] * q[(i, j)] * xi[j];
            let dq: f64 = (0..n).map(|k| b[(i, k)] * q[(k, j)] + q[(i, k)] * b[(j, k)]).sum();
            q1 += xi[i] * dq * xi[j];
        }
    }
    let s = model.s();
    q0.powf(s) + 0.5 * t * s * q0.powf(s - 1.0) * q1
}

fn direction(dim: usize, angle: f64) -> [f64; 2] {
    if dim == 1 {
        [1.0, 0.0]
    } else {
        [angle.cos(), angle.sin()]
    }
}

/// Extrema of `β` and the derived exponent, with optional trial diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
    /// Time samples and sphere samples of the tensor search.
    pub grid_resolution: (usize, usize),
    /// `(t, angle)` of the minimum and maximum; the angle is 0 in 1D.
    pub argmin: (f64, f64),
    pub argmax: (f64, f64),
    pub worst_ratio_fractional: Option<f64>,
    pub k_needed_analytic: Option<f64>,
}

/// `c₁ = min β`, `c₂ = max β` over `[0,T] × S^{N-1}`.
///
/// Times are uniform on `[0, T]`; in 2D the directions are uniform angles on
/// `[0, π)`, which covers the sphere because `β(t, -ξ) = β(t, ξ)`; in 1D the
/// single direction `ξ = 1` suffices for the same reason. The best samples are
/// refined by alternating golden-section searches in `t` and in the angle.
pub fn convexity_constant(
    model: &OuModel,
    horizon: f64,
    time_samples: usize,
    sphere_samples: usize,
) -> Result<ConvexityReport> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(OuError::InvalidArgument(format!("horizon T = {horizon} must be > 0")));
    }
    if time_samples < 64 || sphere_samples < 64 {
        return Err(OuError::InvalidArgument(format!(
            "need at least 64 time and sphere samples, got {time_samples} and {sphere_samples}"
        )));
    }
    let dim = model.dim();
    let s = model.s();
    let dt = horizon / (time_samples - 1) as f64;
    let (gx, gw) = gauss_legendre(STEP_GL_POINTS);
    // G(τ) = e^{τB} Q e^{τBᵀ} on the nodes of every time step.
    let mut mats = Vec::with_capacity((time_samples - 1) * STEP_GL_POINTS);
    for step in 0..time_samples - 1 {
        let a = step as f64 * dt;
        for x in &gx {
            let tau = a + 0.5 * dt * (x + 1.0);
            mats.push(crate::semigroup::symbol_matrix(model, -tau));
        }
    }
    let angles: Vec<f64> =
        if dim == 1 { vec![0.0] } else { (0..sphere_samples).map(|j| PI * j as f64 / sphere_samples as f64).collect() };
    let g0 = crate::semigroup::symbol_matrix(model, 0.0);
    let extremes: Vec<((f64, usize), (f64, usize))> = angles
        .par_iter()
        .map(|&angle| {
            let xi = direction(dim, angle);
            let xi = &xi[..dim];
            let first = symbol_density(&g0, xi, s);
            let mut lo = (first, 0usize);
            let mut hi = (first, 0usize);
            let mut acc = 0.0;
            for step in 0..time_samples - 1 {
                let base = step * STEP_GL_POINTS;
                let seg: f64 = gw.iter().enumerate().map(|(k, w)| w * symbol_density(&mats[base + k], xi, s)).sum();
                acc += 0.5 * dt * seg;
                let b = acc / ((step + 1) as f64 * dt);
                if b < lo.0 {
                    lo = (b, step + 1);
                }
                if b > hi.0 {
                    hi = (b, step + 1);
                }
            }
            (lo, hi)
        })
        .collect();
    let mut lo = (f64::INFINITY, 0, 0);
    let mut hi = (f64::NEG_INFINITY, 0, 0);
    for (j, ((lv, li), (hv, hi_idx))) in extremes.iter().enumerate() {
        if *lv < lo.0 {
            lo = (*lv, *li, j);
        }
        if *hv > hi.0 {
            hi = (*hv, *hi_idx, j);
        }
    }
    let search = Search { model, horizon, dt, dim, dangle: PI / sphere_samples as f64 };
    let (c1, argmin) = search.polish(lo.1 as f64 * dt, angles[lo.2], -1.0)?;
    let (c2, argmax) = search.polish(hi.1 as f64 * dt, angles[hi.2], 1.0)?;
    let (c1, c2) = (c1.min(lo.0), c2.max(hi.0));
    if !(c1 > 0.0) {
        return Err(OuError::DegenerateNorm(format!("β attains a nonpositive minimum {c1}")));
    }
    Ok(ConvexityReport {
        c1,
        c2,
        c: c1 / c2,
        grid_resolution: (time_samples, sphere_samples),
        argmin,
        argmax,
        worst_ratio_fractional: None,
        k_needed_analytic: None,
    })
}

struct Search<'a> {
    model: &'a OuModel,
    horizon: f64,
    dt: f64,
    dim: usize,
    dangle: f64,
}

impl Search<'_> {
    fn value(&self, t: f64, angle: f64) -> Result<f64> {
        let xi = direction(self.dim, angle);
        beta(self.model, t, &xi[..self.dim])
    }

    /// Alternating golden-section refinement; `sign = 1` maximizes, `-1` minimizes.
    fn polish(&self, t0: f64, a0: f64, sign: f64) -> Result<(f64, (f64, f64))> {
        let mut t = t0;
        let mut a = a0;
        let mut best = self.value(t, a)?;
        for _ in 0..POLISH_ROUNDS {
            let lo = (t - self.dt).max(0.0);
            let hi = (t + self.dt).min(self.horizon);
            let (tv, signed) = golden(|x| self.value(x, a).map(|v| sign * v), lo, hi)?;
            if signed > sign * best {
                t = tv;
                best = sign * signed;
            }
            if self.dim == 2 {
                let (av, signed) = golden(|x| self.value(t, x).map(|v| sign * v), a - self.dangle, a + self.dangle)?;
                if signed > sign * best {
                    a = av;
                    best = sign * signed;
                }
            }
        }
        Ok((best, (t, a.rem_euclid(PI))))
    }
}

/// Maximizes `f` on `[lo, hi]`, endpoints included.
fn golden<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..GOLDEN_ITERS {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
        if (b - a).abs() < 1e-13 * (1.0 + a.abs()) {
            break;
        }
    }
    let mut best = if fc > fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let v = f(x)?;
        if v > best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}

/// Settings of the log-convexity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityConfig {
    pub propagator: PropagatorConfig,
    pub time_samples: usize,
    pub sphere_samples: usize,
    /// Relative slack allowed on each inequality.
    pub slack: f64,
}

impl Default for ConvexityConfig {
    fn default() -> Self {
        // Oversampling 4 resamples to ~1e-7, ample against the 1e-6 slack and
        // five times cheaper than the propagator default in 2D.
        let propagator = PropagatorConfig { oversample: 4, ..PropagatorConfig::default() };
        Self { propagator, time_samples: 512, sphere_samples: 256, slack: 1e-6 }
    }
}

/// One evaluated instance of an inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogConvexityVerdict {
    pub passed: bool,
    /// Largest `lhs/rhs` over the checked times.
    pub worst_ratio: f64,
    pub rows: Vec<InequalityRow>,
}

/// Precomputed propagators for repeated Lebesgue log-convexity checks on one grid.
#[derive(Debug, Clone)]
pub struct LogConvexityProbe {
    trace_b: f64,
    horizon: f64,
    c: f64,
    slack: f64,
    times: Vec<f64>,
    props: Vec<Option<FourierPropagator>>,
    final_prop: FourierPropagator,
}

impl LogConvexityProbe {
    pub fn new(model: &OuModel, grid: &GridSpec, horizon: f64, times: &[f64], cfg: &ConvexityConfig) -> Result<Self> {
        let report = convexity_constant(model, horizon, cfg.time_samples, cfg.sphere_samples)?;
        Self::with_constant(model, grid, horizon, times, report.c, cfg)
    }

    /// Probe with a known exponent `c`.
    pub fn with_constant(
        model: &OuModel,
        grid: &GridSpec,
        horizon: f64,
        times: &[f64],
        c: f64,
        cfg: &ConvexityConfig,
    ) -> Result<Self> {
        if times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(OuError::InvalidArgument(format!("check times must lie in [0, {horizon}]")));
        }
        let props =
            times
                .iter()
                .map(|&t| {
                    if t == 0.0 {
                        Ok(None)
                    } else {
                        FourierPropagator::new(model, grid, t, &cfg.propagator).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trace_b: model.trace_b(),
            horizon,
            c,
            slack: cfg.slack,
            times: times.to_vec(),
            props,
            final_prop: FourierPropagator::new(model, grid, horizon, &cfg.propagator)?,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Evaluates `‖u(t)‖ ≤ e^{-tr(B)(1-c)t/2} ‖u₀‖^{1-ct/T} ‖u(T)‖^{ct/T}` at every probe time.
    pub fn check(&self, u0: &Field) -> Result<LogConvexityVerdict> {
        u0.require_boundary_decay("initial datum")?;
        let n0 = norm_l2(u0);
        if n0 == 0.0 {
            return Err(OuError::DegenerateNorm("initial datum vanishes".into()));
        }
        let nt = norm_l2(&self.final_prop.apply(u0)?);
        if nt < NORM_UNDERFLOW {
            return Err(OuError::DegenerateNorm(format!("‖u(T)‖ = {nt:e} underflows")));
        }
        let mut rows = Vec::with_capacity(self.times.len());
        for (t, prop) in self.times.iter().zip(&self.props) {
            let lhs = match prop {
                Some(p) => norm_l2(&p.apply(u0)?),
                None => n0,
            };
            let theta = self.c * t / self.horizon;
            let rhs = (-0.5 * self.trace_b * (1.0 - self.c) * t).exp() * n0.powf(1.0 - theta) * nt.powf(theta);
            rows.push(InequalityRow { t: *t, lhs, rhs, ratio: lhs / rhs });
        }
        let worst_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        Ok(LogConvexityVerdict { passed: worst_ratio <= 1.0 + self.slack, worst_ratio, rows })
    }
}

/// Checks the Lebesgue log-convexity estimate for one initial datum.
pub fn check_logconvexity_fractional(
    model: &OuModel,
    u0: &Field,
    horizon: f64,
    times: &[f64],
    cfg: &ConvexityConfig,
) -> Result<LogConvexityVerdict> {
    LogConvexityProbe::new(model, u0.grid(), horizon, times, cfg)?.check(u0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticVerdict {
    pub passed: bool,
    /// Smallest `K` for which the weighted estimate holds at every checked time.
    pub k_needed: f64,
    pub angle: AngleReport,
    pub rows: Vec<InequalityRow>,
}

/// Checks `‖u(t)‖_μ ≤ K ‖u₀‖_μ^{1-θ(t)} ‖u(T)‖_μ^{θ(t)}` with `θ(t) = (t/(rT))^φ`,
/// propagating with Kolmogorov's formula; `rows` carry `K = 1` on the right.
pub fn check_logconvexity_analytic(
    model: &OuModel,
    u0: &Field,
    horizon: f64,
    times: &[f64],
    cfg: &ConvexityConfig,
    k_cap: f64,
) -> Result<AnalyticVerdict> {
    if model.s() != 1.0 {
        return Err(OuError::FractionalUnsupported(model.s()));
    }
    let angle = analyticity_angle(model)?;
    if times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(OuError::InvalidArgument(format!("check times must lie in [0, {horizon}]")));
    }
    let rho = invariant_density(model, u0.grid())?;
    let n0 = norm_l2_mu(u0, &rho)?;
    if n0 == 0.0 {
        return Err(OuError::DegenerateNorm("initial datum vanishes in L²_μ".into()));
    }
    let nt = norm_l2_mu(&propagate_kolmogorov(model, u0, horizon, &cfg.propagator)?, &rho)?;
    if nt < NORM_UNDERFLOW {
        return Err(OuError::DegenerateNorm(format!("‖u(T)‖ = {nt:e} underflows")));
    }
    let rows = times
        .iter()
        .map(|&t| {
            let lhs =
                if t == 0.0 { n0 } else { norm_l2_mu(&propagate_kolmogorov(model, u0, t, &cfg.propagator)?, &rho)? };
            let theta = (t / (angle.r * horizon)).powf(angle.phi);
            let rhs = n0.powf(1.0 - theta) * nt.powf(theta);
            Ok(InequalityRow { t, lhs, rhs, ratio: lhs / rhs })
        })
        .collect::<Result<Vec<_>>>()?;
    let k_needed = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(AnalyticVerdict { passed: k_needed <= k_cap, k_needed, angle, rows })
}
