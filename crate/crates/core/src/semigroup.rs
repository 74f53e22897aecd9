//! The Ornstein–Uhlenbeck semigroup evaluated from its explicit formulas.
//!
//! [`propagate_fourier`] applies the Fourier multiplier representation, valid for
//! every fractional order `s > 0`:
//!
//! `û(t)(ξ) = e^{-tr(B)t} exp(-∫₀ᵗ |Q^{½} e^{-τBᵀ} ξ|^{2s} dτ) û₀(e^{-tBᵀ} ξ)`.
//!
//! [`propagate_kolmogorov`] evaluates Kolmogorov's Gaussian convolution formula
//! (`s = 1` only). The two share no code beyond the grid and serve as oracles
//! for each other.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{OuError, Result, Warning};
use crate::fft;
use crate::field::{check_dims, Field, GridSpec};
use crate::matops::{expm, gramian_qt, Matrix, OuModel};
use crate::quad::{adaptive_simpson, gauss_legendre, gauss_legendre_on};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Lost spectral mass above which the frequency warp raises a warning.
pub const FREQUENCY_LOSS_TOL: f64 = 0.01;

/// Half width of the Kolmogorov quadrature box in kernel standard deviations.
pub const KERNEL_BOX_SIGMAS: f64 = 8.0;
/// Narrowest kernel standard deviation, in grid cells, for which the Kolmogorov
/// convolution switches from Gauss–Legendre to the grid trapezoid sum.
pub const GRID_SUM_MIN_CELLS: f64 = 1.5;

/// Fraction of the box width over which the generator's drift term is tapered.
pub const TAPER_FRACTION: f64 = 0.05;

/// Resampling rule for the warped frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Linear,
    CubicSpline,
}

impl std::str::FromStr for Interp {
    type Err = OuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interp::Nearest),
            "linear" => Ok(Interp::Linear),
            "cubic-spline" => Ok(Interp::CubicSpline),
            _ => Err(OuError::InvalidArgument(format!("unknown interpolation {s:?} (nearest, linear, cubic-spline)"))),
        }
    }
}

impl std::fmt::Display for Interp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interp::Nearest => "nearest",
            Interp::Linear => "linear",
            Interp::CubicSpline => "cubic-spline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConfig {
    /// Tolerance of the symbol time integral.
    pub quad_tol: f64,
    pub interp: Interp,
    /// Gauss–Legendre points per axis of the Kolmogorov convolution.
    pub kernel_quad_points: usize,
    /// Zero-padding factor of the spectrum that the warp resamples.
    pub oversample: usize,
    /// Spectral refinement factor of `u₀` before off-grid spline evaluation;
    /// 1 keeps the evaluation local, which suits non-smooth periodic data.
    pub kernel_upsample: usize,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self { quad_tol: 1e-10, interp: Interp::CubicSpline, kernel_quad_points: 64, oversample: 8, kernel_upsample: 4 }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quad_tol > 0.0) {
            return Err(OuError::InvalidArgument(format!("quad_tol = {} must be > 0", self.quad_tol)));
        }
        if self.kernel_quad_points < 8 {
            return Err(OuError::InvalidArgument(format!(
                "kernel_quad_points = {} must be >= 8",
                self.kernel_quad_points
            )));
        }
        if !(1..=16).contains(&self.oversample) || !self.oversample.is_power_of_two() {
            return Err(OuError::InvalidArgument(format!(
                "oversample = {} must be a power of two in [1, 16]",
                self.oversample
            )));
        }
        if !(1..=16).contains(&self.kernel_upsample) || !self.kernel_upsample.is_power_of_two() {
            return Err(OuError::InvalidArgument(format!(
                "kernel_upsample = {} must be a power of two in [1, 16]",
                self.kernel_upsample
            )));
        }
        Ok(())
    }
}

/// `(ξᵀ G ξ)^s` for a symmetric 2×2 (or 1×1) `G` stored as `[g00, g01, g11]`.
pub(crate) fn symbol_density(g: &[f64; 3], xi: &[f64], s: f64) -> f64 {
    let v = if xi.len() == 1 {
        g[0] * xi[0] * xi[0]
    } else {
        g[0] * xi[0] * xi[0] + 2.0 * g[1] * xi[0] * xi[1] + g[2] * xi[1] * xi[1]
    };
    let v = v.max(0.0);
    if s == 1.0 {
        v
    } else {
        v.powf(s)
    }
}

/// `e^{-τB} Q e^{-τBᵀ}`, so that `ξᵀ G(τ) ξ = |Q^{½} e^{-τBᵀ} ξ|²`.
pub(crate) fn symbol_matrix(model: &OuModel, tau: f64) -> [f64; 3] {
    let e = expm(model.b(), -tau);
    let g = &e * model.q() * e.transpose();
    if model.dim() == 1 {
        [g[(0, 0)], 0.0, 0.0]
    } else {
        [g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]]
    }
}

/// `∫₀ᵗ |Q^{½} e^{-τBᵀ} ξ|^{2s} dτ` by adaptive Simpson with the default tolerance.
pub fn symbol_integral(model: &OuModel, t: f64, xi: &[f64]) -> Result<f64> {
    symbol_integral_tol(model, t, xi, PropagatorConfig::default().quad_tol)
}

/// [`symbol_integral`] with an explicit tolerance, relative to `max(1, t·integrand(0))`.
pub fn symbol_integral_tol(model: &OuModel, t: f64, xi: &[f64], tol: f64) -> Result<f64> {
    signed_symbol_integral(model, t, xi, tol, 1.0)
}

/// `∫₀ᵗ |Q^{½} e^{-sign·τBᵀ} ξ|^{2s} dτ`.
pub(crate) fn signed_symbol_integral(model: &OuModel, t: f64, xi: &[f64], tol: f64, sign: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(OuError::InvalidArgument(format!("time t = {t} must be >= 0")));
    }
    if xi.len() != model.dim() {
        return Err(OuError::InvalidArgument("frequency vector has the wrong dimension".into()));
    }
    if t == 0.0 || xi.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let s = model.s();
    let f = |tau: f64| symbol_density(&symbol_matrix(model, sign * tau), xi, s);
    let scale = (t * f(0.0)).max(1.0);
    adaptive_simpson(f, 0.0, t, tol * scale)
}

const SYMBOL_GL_POINTS: usize = 16;
const SYMBOL_MAX_PANELS: usize = 1024;

/// Composite Gauss–Legendre rule for the symbol integral with precomputed
/// `G(τ)`, refined by panel doubling until probe frequencies agree to `tol`.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    s: f64,
    dim: usize,
    weights: Vec<f64>,
    mats: Vec<[f64; 3]>,
}

impl SymbolTable {
    /// Table for `∫₀ᵗ`; `probes` are frequencies where convergence is checked.
    pub fn new(model: &OuModel, t: f64, tol: f64, probes: &[Vec<f64>]) -> Result<Self> {
        Self::with_sign(model, t, tol, probes, 1.0)
    }

    /// Table for the companion integral `∫₀ᵗ |Q^{½} e^{+τBᵀ} ξ|^{2s} dτ`.
    pub fn reversed(model: &OuModel, t: f64, tol: f64, probes: &[Vec<f64>]) -> Result<Self> {
        Self::with_sign(model, t, tol, probes, -1.0)
    }

    fn with_sign(model: &OuModel, t: f64, tol: f64, probes: &[Vec<f64>], sign: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(OuError::InvalidArgument(format!("time t = {t} must be >= 0")));
        }
        let build = |panels: usize| {
            let (x, w) = gauss_legendre(SYMBOL_GL_POINTS);
            let h = t / panels as f64;
            let mut weights = Vec::with_capacity(panels * SYMBOL_GL_POINTS);
            let mut mats = Vec::with_capacity(panels * SYMBOL_GL_POINTS);
            for p in 0..panels {
                let a = p as f64 * h;
                for (xi, wi) in x.iter().zip(&w) {
                    let tau = a + 0.5 * h * (xi + 1.0);
                    weights.push(0.5 * h * wi);
                    mats.push(symbol_matrix(model, sign * tau));
                }
            }
            SymbolTable { s: model.s(), dim: model.dim(), weights, mats }
        };
        let mut table = build(1);
        if t == 0.0 {
            return Ok(table);
        }
        let mut panels = 1;
        loop {
            let finer = build(2 * panels);
            let worst = probes
                .iter()
                .map(|xi| {
                    let a = table.eval(xi);
                    let b = finer.eval(xi);
                    (a - b).abs() / b.abs().max(1.0)
                })
                .fold(0.0, f64::max);
            table = finer;
            panels *= 2;
            if worst <= tol {
                return Ok(table);
            }
            if panels >= SYMBOL_MAX_PANELS {
                return Err(OuError::QuadratureNonConvergence { tol, estimate: worst });
            }
        }
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        let xi = &xi[..self.dim];
        if xi.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        self.weights.iter().zip(&self.mats).map(|(w, g)| w * symbol_density(g, xi, self.s)).sum()
    }
}

/// Probe frequencies on the edges and diagonal of the frequency box.
fn box_probes(grid: &GridSpec) -> Vec<Vec<f64>> {
    let k = grid.freq(0).abs();
    if grid.dim() == 1 {
        vec![vec![k], vec![0.5 * k]]
    } else {
        vec![vec![k, 0.0], vec![0.0, k], vec![k, k], vec![k, -k], vec![0.5 * k, 0.25 * k]]
    }
}

fn bspline3(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Solves `(c_{i-1} + 4c_i + c_{i+1})/6 = d_i` with zero end conditions (Thomas algorithm).
fn spline_prefilter(line: &mut [Complex64], work: &mut [f64]) {
    let n = line.len();
    let (a, c) = (1.0 / 6.0, 1.0 / 6.0);
    let b = 4.0 / 6.0;
    work[0] = c / b;
    line[0] /= b;
    for i in 1..n {
        let m = b - a * work[i - 1];
        work[i] = c / m;
        let prev = line[i - 1];
        line[i] = (line[i] - prev * a) / m;
    }
    for i in (0..n - 1).rev() {
        let next = line[i + 1];
        line[i] -= next * work[i];
    }
}

/// One-dimensional taps `(index, weight)` of the chosen interpolant at `pos`.
fn taps_1d(interp: Interp, pos: f64, n: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let inside = |i: i64| i >= 0 && (i as usize) < n;
    match interp {
        Interp::Nearest => {
            let i = pos.round() as i64;
            if inside(i) {
                out.push((i as usize, 1.0));
            }
        }
        Interp::Linear => {
            let i = pos.floor() as i64;
            let f = pos - i as f64;
            for (j, w) in [(i, 1.0 - f), (i + 1, f)] {
                if inside(j) && w != 0.0 {
                    out.push((j as usize, w));
                }
            }
        }
        Interp::CubicSpline => {
            let i = pos.floor() as i64;
            for j in i - 1..=i + 2 {
                if inside(j) {
                    out.push((j as usize, bspline3(pos - j as f64)));
                }
            }
        }
    }
}

/// Precomputed linear map `u₀ ↦ T(t)u₀` on one grid, with its exact adjoint.
///
/// Stages: zero-pad by `oversample`, centered DFT, spline prefilter (cubic
/// only), sparse resampling at `e^{-tBᵀ}ξ_k`, multiplier, coarse inverse DFT.
#[derive(Debug, Clone)]
pub struct FourierPropagator {
    grid: GridSpec,
    fine_n: usize,
    prefilter: bool,
    taps: usize,
    tap_index: Vec<u32>,
    tap_weight: Vec<f64>,
    multiplier: Vec<f64>,
    warp_det: f64,
}

impl FourierPropagator {
    pub fn new(model: &OuModel, grid: &GridSpec, t: f64, cfg: &PropagatorConfig) -> Result<Self> {
        check_dims(model, grid)?;
        cfg.validate()?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(OuError::InvalidArgument(format!("time t = {t} must be >= 0")));
        }
        let dim = grid.dim();
        let n = grid.n();
        let p = cfg.oversample;
        let fine_n = n * p;
        let fine_dxi = grid.freq_spacing() / p as f64;
        let warp = expm(&model.b().transpose(), -t);
        let table = SymbolTable::new(model, t, cfg.quad_tol, &box_probes(grid))?;
        let damping = (-model.trace_b() * t).exp();
        let taps = match cfg.interp {
            Interp::Nearest => 1,
            Interp::Linear => 2usize.pow(dim as u32),
            Interp::CubicSpline => 4usize.pow(dim as u32),
        };
        let len = grid.len();
        let mut tap_index = vec![0u32; len * taps];
        let mut tap_weight = vec![0.0; len * taps];
        let mut multiplier = vec![0.0; len];
        let mut ax0 = Vec::with_capacity(4);
        let mut ax1 = Vec::with_capacity(4);
        let half_fine = (fine_n / 2) as f64;
        for k in 0..len {
            let xi = grid.freq_point(k);
            let m = damping * (-table.eval(&xi[..dim])).exp();
            multiplier[k] = m;
            if m == 0.0 {
                continue;
            }
            let base = k * taps;
            if dim == 1 {
                let eta = warp[(0, 0)] * xi[0];
                taps_1d(cfg.interp, eta / fine_dxi + half_fine, fine_n, &mut ax0);
                for (slot, &(i, w)) in ax0.iter().enumerate() {
                    tap_index[base + slot] = i as u32;
                    tap_weight[base + slot] = w;
                }
            } else {
                let eta0 = warp[(0, 0)] * xi[0] + warp[(0, 1)] * xi[1];
                let eta1 = warp[(1, 0)] * xi[0] + warp[(1, 1)] * xi[1];
                taps_1d(cfg.interp, eta0 / fine_dxi + half_fine, fine_n, &mut ax0);
                taps_1d(cfg.interp, eta1 / fine_dxi + half_fine, fine_n, &mut ax1);
                let mut slot = 0;
                for &(i, wi) in &ax0 {
                    for &(j, wj) in &ax1 {
                        tap_index[base + slot] = (i * fine_n + j) as u32;
                        tap_weight[base + slot] = wi * wj;
                        slot += 1;
                    }
                }
            }
        }
        Ok(Self {
            grid: *grid,
            fine_n,
            prefilter: cfg.interp == Interp::CubicSpline,
            taps,
            tap_index,
            tap_weight,
            multiplier,
            warp_det: warp.determinant().abs(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn pad(&self, values: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n();
        let nf = self.fine_n;
        let off = (nf - n) / 2;
        let mut fine = vec![ZERO; nf.pow(self.grid.dim() as u32)];
        if self.grid.dim() == 1 {
            fine[off..off + n].copy_from_slice(values);
        } else {
            for (r, row) in values.chunks(n).enumerate() {
                let start = (r + off) * nf + off;
                fine[start..start + n].copy_from_slice(row);
            }
        }
        fine
    }

    fn crop(&self, fine: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n();
        let nf = self.fine_n;
        let off = (nf - n) / 2;
        if self.grid.dim() == 1 {
            fine[off..off + n].to_vec()
        } else {
            let mut out = Vec::with_capacity(n * n);
            for r in 0..n {
                let start = (r + off) * nf + off;
                out.extend_from_slice(&fine[start..start + n]);
            }
            out
        }
    }

    fn prefilter_all(&self, data: &mut [Complex64]) {
        if !self.prefilter {
            return;
        }
        let mut work = vec![0.0; self.fine_n];
        for axis in 0..self.grid.dim() {
            fft::for_each_line(data, self.fine_n, self.grid.dim(), axis, |line| spline_prefilter(line, &mut work));
        }
    }

    /// Spectrum of `u₀` on the oversampled frequency grid, ready for resampling.
    fn fine_spectrum(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut fine = self.pad(values);
        fft::dft_centered(&mut fine, self.fine_n, self.grid.dim());
        let w = self.grid.cell_volume();
        fine.iter_mut().for_each(|v| *v *= w);
        self.prefilter_all(&mut fine);
        fine
    }

    /// `û₀(e^{-tBᵀ}ξ_k)` on the coarse frequency grid (without the multiplier).
    fn warped(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        (0..self.grid.len())
            .map(|k| {
                let base = k * self.taps;
                let mut acc = ZERO;
                for s in base..base + self.taps {
                    acc += coeffs[self.tap_index[s] as usize] * self.tap_weight[s];
                }
                acc
            })
            .collect()
    }

    fn coarse_inverse(&self, mut spec: Vec<Complex64>) -> Vec<Complex64> {
        fft::dft_centered_adjoint(&mut spec, self.grid.n(), self.grid.dim());
        let w = (1.0 / (self.grid.n() as f64 * self.grid.spacing())).powi(self.grid.dim() as i32);
        spec.iter_mut().for_each(|v| *v *= w);
        spec
    }

    pub fn apply_values(&self, values: &[Complex64]) -> Vec<Complex64> {
        let fine = self.fine_spectrum(values);
        let mut spec = self.warped(&fine);
        spec.iter_mut().zip(&self.multiplier).for_each(|(v, m)| *v *= m);
        self.coarse_inverse(spec)
    }

    /// Exact adjoint of [`apply_values`](Self::apply_values) for the plain ℓ² pairing.
    pub fn apply_adjoint_values(&self, values: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n();
        let dim = self.grid.dim();
        let mut spec = values.to_vec();
        fft::dft_centered(&mut spec, n, dim);
        let w = (1.0 / (n as f64 * self.grid.spacing())).powi(dim as i32);
        spec.iter_mut().zip(&self.multiplier).for_each(|(v, m)| *v *= w * m);
        let mut fine = vec![ZERO; self.fine_n.pow(dim as u32)];
        for (k, v) in spec.iter().enumerate() {
            let base = k * self.taps;
            for s in base..base + self.taps {
                fine[self.tap_index[s] as usize] += v * self.tap_weight[s];
            }
        }
        self.prefilter_all(&mut fine);
        fft::dft_centered_adjoint(&mut fine, self.fine_n, dim);
        let h = self.grid.cell_volume();
        fine.iter_mut().for_each(|v| *v *= h);
        self.crop(&fine)
    }

    pub fn apply(&self, u0: &Field) -> Result<Field> {
        self.check(u0)?;
        Ok(Field::from_raw(self.grid, self.apply_values(u0.values())))
    }

    pub fn apply_adjoint(&self, v: &Field) -> Result<Field> {
        self.check(v)?;
        Ok(Field::from_raw(self.grid, self.apply_adjoint_values(v.values())))
    }

    /// Share of `‖û₀‖²` that the warp moves outside the frequency box.
    pub fn lost_fraction(&self, u0: &Field) -> Result<f64> {
        self.check(u0)?;
        let fine = self.fine_spectrum(u0.values());
        let kept: f64 = self.warped(&fine).iter().map(|c| c.norm_sqr()).sum();
        let mut coarse = u0.values().to_vec();
        fft::dft_centered(&mut coarse, self.grid.n(), self.grid.dim());
        let h = self.grid.cell_volume();
        let total: f64 = coarse.iter().map(|c| c.norm_sqr()).sum::<f64>() * h * h;
        if total == 0.0 {
            return Ok(0.0);
        }
        Ok((1.0 - self.warp_det * kept / total).max(0.0))
    }

    fn check(&self, f: &Field) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(OuError::GridMismatch);
        }
        Ok(())
    }
}

/// `T(t)u₀` from the Fourier representation.
pub fn propagate_fourier(model: &OuModel, u0: &Field, t: f64, cfg: &PropagatorConfig) -> Result<Field> {
    propagate_fourier_report(model, u0, t, cfg).map(|(u, _)| u)
}

/// [`propagate_fourier`] together with the non-fatal diagnostics it raised.
pub fn propagate_fourier_report(
    model: &OuModel,
    u0: &Field,
    t: f64,
    cfg: &PropagatorConfig,
) -> Result<(Field, Vec<Warning>)> {
    check_dims(model, u0.grid())?;
    u0.require_boundary_decay("initial datum")?;
    if t == 0.0 {
        return Ok((u0.clone(), Vec::new()));
    }
    let prop = FourierPropagator::new(model, u0.grid(), t, cfg)?;
    let mut warnings = Vec::new();
    let lost = prop.lost_fraction(u0)?;
    if lost > FREQUENCY_LOSS_TOL {
        let w = Warning::FrequencyBoxExceeded { lost_fraction: lost };
        log::warn!("{w}");
        warnings.push(w);
    }
    let u = prop.apply(u0)?;
    if u.boundary_ratio() > crate::field::BOUNDARY_DECAY_TOL {
        let w = Warning::DomainTooSmall {
            detail: format!("solution at t = {t} reaches {:.3e} of its peak on the boundary", u.boundary_ratio()),
        };
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok((u, warnings))
}

/// Periodic cubic B-spline representation of a field refined spectrally by `up`.
struct PeriodicSpline {
    dim: usize,
    n: usize,
    origin: f64,
    inv_h: f64,
    coeffs: Vec<Complex64>,
}

impl PeriodicSpline {
    fn new(f: &Field, up: usize) -> Self {
        let g = f.grid();
        let n = g.n();
        let dim = g.dim();
        let nf = n * up;
        let mut spec = f.values().to_vec();
        fft::fft_nd(&mut spec, n, dim, false);
        // Embed into the refined spectrum; the Nyquist bin is split evenly.
        let map = |k: usize| -> Vec<(usize, f64)> {
            if up == 1 || k < n / 2 {
                vec![(k, 1.0)]
            } else if k == n / 2 {
                vec![(k, 0.5), (nf - n / 2, 0.5)]
            } else {
                vec![(nf - (n - k), 1.0)]
            }
        };
        let mut fine = vec![ZERO; nf.pow(dim as u32)];
        if dim == 1 {
            for (k, v) in spec.iter().enumerate() {
                for (kk, w) in map(k) {
                    fine[kk] += v * w;
                }
            }
        } else {
            for k0 in 0..n {
                for k1 in 0..n {
                    let v = spec[k0 * n + k1];
                    for (a, wa) in map(k0) {
                        for (b, wb) in map(k1) {
                            fine[a * nf + b] += v * (wa * wb);
                        }
                    }
                }
            }
        }
        let symbol: Vec<f64> = (0..nf).map(|k| (4.0 + 2.0 * (2.0 * PI * k as f64 / nf as f64).cos()) / 6.0).collect();
        if dim == 1 {
            fine.iter_mut().zip(&symbol).for_each(|(v, s)| *v /= s);
        } else {
            for (idx, v) in fine.iter_mut().enumerate() {
                *v /= symbol[idx / nf] * symbol[idx % nf];
            }
        }
        fft::fft_nd(&mut fine, nf, dim, true);
        let scale = 1.0 / (n.pow(dim as u32)) as f64;
        fine.iter_mut().for_each(|v| *v *= scale);
        Self { dim, n: nf, origin: -g.half_width(), inv_h: up as f64 / g.spacing(), coeffs: fine }
    }

    fn taps(&self, x: f64) -> ([usize; 4], [f64; 4]) {
        let pos = (x - self.origin) * self.inv_h;
        let i = pos.floor();
        let f = pos - i;
        let i = i as i64;
        let n = self.n as i64;
        let idx = if i >= 1 && i + 2 < n {
            let i = i as usize;
            [i - 1, i, i + 1, i + 2]
        } else {
            [0, 1, 2, 3].map(|s| (i - 1 + s).rem_euclid(n) as usize)
        };
        // Uniform cubic B-spline weights at offsets 1+f, f, 1-f, 2-f.
        let g = 1.0 - f;
        let w = [
            g * g * g / 6.0,
            (3.0 * f * f * f - 6.0 * f * f + 4.0) / 6.0,
            (3.0 * g * g * g - 6.0 * g * g + 4.0) / 6.0,
            f * f * f / 6.0,
        ];
        (idx, w)
    }

    fn eval(&self, x: &[f64]) -> Complex64 {
        let (i0, w0) = self.taps(x[0]);
        if self.dim == 1 {
            return (0..4).map(|s| self.coeffs[i0[s]] * w0[s]).sum();
        }
        let (i1, w1) = self.taps(x[1]);
        let mut acc = ZERO;
        for a in 0..4 {
            let row = i0[a] * self.n;
            let mut r = ZERO;
            for b in 0..4 {
                r += self.coeffs[row + i1[b]] * w1[b];
            }
            acc += r * w0[a];
        }
        acc
    }

    fn eval_re(&self, x: &[f64]) -> f64 {
        let (i0, w0) = self.taps(x[0]);
        if self.dim == 1 {
            return (0..4).map(|s| self.coeffs[i0[s]].re * w0[s]).sum();
        }
        let (i1, w1) = self.taps(x[1]);
        let mut acc = 0.0;
        for a in 0..4 {
            let row = i0[a] * self.n;
            let mut r = 0.0;
            for b in 0..4 {
                r += self.coeffs[row + i1[b]].re * w1[b];
            }
            acc += r * w0[a];
        }
        acc
    }
}

/// Periodic grid convolution `Σ_y u₀(x−y) g(y) hᴺ` with the centered Gaussian of
/// covariance `cov`, truncated where the kernel falls below `1e-18` of its peak.
fn grid_convolve(u0: &Field, cov: &Matrix) -> Result<Field> {
    let grid = *u0.grid();
    let (dim, n, h) = (grid.dim(), grid.n() as i64, grid.spacing());
    let inv = cov.clone().try_inverse().ok_or_else(|| OuError::InvalidModel("Gramian Q_t is singular".into()))?;
    let norm = h.powi(dim as i32) / ((2.0 * PI).powi(dim as i32) * cov.determinant()).sqrt();
    let cut = 2.0 * 1e18f64.ln();
    let reach = |j: usize| (cut * cov[(j, j)]).sqrt() / h;
    let mut stencil: Vec<(i64, i64, f64)> = Vec::new();
    let r0 = reach(0).ceil() as i64;
    let r1 = if dim == 2 { reach(1).ceil() as i64 } else { 0 };
    for a in -r0..=r0 {
        for b in -r1..=r1 {
            let y = [a as f64 * h, b as f64 * h];
            let q = if dim == 1 {
                inv[(0, 0)] * y[0] * y[0]
            } else {
                inv[(0, 0)] * y[0] * y[0] + 2.0 * inv[(0, 1)] * y[0] * y[1] + inv[(1, 1)] * y[1] * y[1]
            };
            if q <= cut {
                stencil.push((a, b, norm * (-0.5 * q).exp()));
            }
        }
    }
    let vals = u0.values();
    let values: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let [i, j] = grid.unravel(idx);
            let (i, j) = (i as i64, j as i64);
            let mut acc = ZERO;
            for &(a, b, w) in &stencil {
                let ii = (i - a).rem_euclid(n);
                let k = if dim == 1 { ii } else { ii * n + (j - b).rem_euclid(n) };
                acc += vals[k as usize] * w;
            }
            acc
        })
        .collect();
    Ok(Field::from_raw(grid, values))
}

/// `T(t)u₀` from Kolmogorov's formula, `s = 1` only.
///
/// When the Gaussian kernel with covariance `2Q_t` spans at least
/// [`GRID_SUM_MIN_CELLS`] cells along its narrowest axis, the convolution is the
/// periodic trapezoid sum on the grid (spectrally accurate there, and able to
/// resolve data oscillating near the Nyquist rate) and the result is read at
/// `e^{tB}x` from a cubic spline. Narrower kernels are integrated by tensor
/// Gauss–Legendre on `±8` standard deviations in whitened coordinates, reading
/// `u₀` off-grid from a periodic cubic spline of its spectral refinement. Either
/// way bounded periodic data are admissible as well as decaying data.
pub fn propagate_kolmogorov(model: &OuModel, u0: &Field, t: f64, cfg: &PropagatorConfig) -> Result<Field> {
    check_dims(model, u0.grid())?;
    cfg.validate()?;
    if model.s() != 1.0 {
        return Err(OuError::FractionalUnsupported(model.s()));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(OuError::InvalidArgument(format!("time t = {t} must be >= 0")));
    }
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let grid = *u0.grid();
    let dim = grid.dim();
    let cov = gramian_qt(model, t)? * 2.0;
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let sigma_max = eig.iter().cloned().fold(0.0, f64::max).sqrt();
    let sigma_min = eig.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
    if KERNEL_BOX_SIGMAS * sigma_max > grid.half_width() {
        return Err(OuError::DomainTooSmall(format!(
            "kernel box ±{KERNEL_BOX_SIGMAS}σ = ±{:.4} exceeds the half width {}",
            KERNEL_BOX_SIGMAS * sigma_max,
            grid.half_width()
        )));
    }
    let e_tb = expm(model.b(), t);
    if sigma_min >= GRID_SUM_MIN_CELLS * grid.spacing() {
        let v = grid_convolve(u0, &cov)?;
        let spline = PeriodicSpline::new(&v, cfg.kernel_upsample);
        let real = u0.is_real();
        let values: Vec<Complex64> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let c = apply_mat(&e_tb, &grid.point(idx), dim);
                if real {
                    Complex64::new(spline.eval_re(&c), 0.0)
                } else {
                    spline.eval(&c)
                }
            })
            .collect();
        return Ok(Field::from_raw(grid, values));
    }
    let chol = cov.cholesky().ok_or_else(|| OuError::InvalidModel("Gramian Q_t is not positive definite".into()))?.l();
    let (z, wz) = gauss_legendre_on(cfg.kernel_quad_points, -KERNEL_BOX_SIGMAS, KERNEL_BOX_SIGMAS);
    let phi = |v: f64| (-0.5 * v * v).exp() / (2.0 * PI).sqrt();
    let wz: Vec<f64> = z.iter().zip(&wz).map(|(zi, wi)| wi * phi(*zi)).collect();
    // Shifts y = chol·z and weights of the tensor rule.
    let mut shifts: Vec<[f64; 2]> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    if dim == 1 {
        for (zi, wi) in z.iter().zip(&wz) {
            shifts.push([chol[(0, 0)] * zi, 0.0]);
            weights.push(*wi);
        }
    } else {
        for (za, wa) in z.iter().zip(&wz) {
            for (zb, wb) in z.iter().zip(&wz) {
                let w = wa * wb;
                if w < 1e-300 {
                    continue;
                }
                shifts.push([chol[(0, 0)] * za, chol[(1, 0)] * za + chol[(1, 1)] * zb]);
                weights.push(w);
            }
        }
    }
    let spline = PeriodicSpline::new(u0, cfg.kernel_upsample);
    let real = u0.is_real();
    let values: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let c = apply_mat(&e_tb, &grid.point(idx), dim);
            if real {
                let mut acc = 0.0;
                for (y, w) in shifts.iter().zip(&weights) {
                    acc += w * spline.eval_re(&[c[0] - y[0], c[1] - y[1]]);
                }
                Complex64::new(acc, 0.0)
            } else {
                let mut acc = ZERO;
                for (y, w) in shifts.iter().zip(&weights) {
                    acc += spline.eval(&[c[0] - y[0], c[1] - y[1]]) * *w;
                }
                acc
            }
        })
        .collect();
    Ok(Field::from_raw(grid, values))
}

fn apply_mat(m: &Matrix, x: &[f64; 2], dim: usize) -> [f64; 2] {
    if dim == 1 {
        [m[(0, 0)] * x[0], 0.0]
    } else {
        [m[(0, 0)] * x[0] + m[(0, 1)] * x[1], m[(1, 0)] * x[0] + m[(1, 1)] * x[1]]
    }
}

/// Smooth cutoff equal to 1 away from the boundary and falling to 0 over the
/// outer [`TAPER_FRACTION`] of the box width along each axis.
pub fn boundary_taper(grid: &GridSpec, x: &[f64]) -> f64 {
    let l = grid.half_width();
    let band = TAPER_FRACTION * 2.0 * l;
    x.iter()
        .map(|&xi| {
            let d = l - xi.abs();
            if d >= band {
                1.0
            } else {
                0.5 * (1.0 - (PI * d.max(0.0) / band).cos())
            }
        })
        .product()
}

/// The generator `𝒜u = -(−∇·Q∇)^s u + Bx·∇u`, computed spectrally with the drift
/// term tapered near the boundary.
pub fn apply_generator(model: &OuModel, u0: &Field) -> Result<Field> {
    check_dims(model, u0.grid())?;
    u0.require_boundary_decay("generator argument")?;
    let grid = *u0.grid();
    let n = grid.n();
    let dim = grid.dim();
    let s = model.s();
    let q = model.q();
    let b = model.b();
    let mut spec = u0.values().to_vec();
    fft::dft_centered(&mut spec, n, dim);
    let nyquist = |idx: usize| {
        let [i, j] = grid.unravel(idx);
        i == 0 || (dim == 2 && j == 0)
    };
    let mut diffusion = spec.clone();
    for (idx, v) in diffusion.iter_mut().enumerate() {
        let xi = grid.freq_point(idx);
        let qf = if dim == 1 {
            q[(0, 0)] * xi[0] * xi[0]
        } else {
            q[(0, 0)] * xi[0] * xi[0] + 2.0 * q[(0, 1)] * xi[0] * xi[1] + q[(1, 1)] * xi[1] * xi[1]
        };
        *v *= -qf.max(0.0).powf(s);
    }
    let inv_scale = 1.0 / grid.len() as f64;
    fft::dft_centered_adjoint(&mut diffusion, n, dim);
    let mut out: Vec<Complex64> = diffusion.iter().map(|v| v * inv_scale).collect();
    for axis in 0..dim {
        let mut d = spec.clone();
        for (idx, v) in d.iter_mut().enumerate() {
            if nyquist(idx) {
                *v = ZERO;
            } else {
                let xi = grid.freq_point(idx)[axis];
                *v *= Complex64::new(0.0, xi);
            }
        }
        fft::dft_centered_adjoint(&mut d, n, dim);
        for (idx, (o, g)) in out.iter_mut().zip(&d).enumerate() {
            let x = grid.point(idx);
            let bx: f64 = (0..dim).map(|c| b[(axis, c)] * x[c]).sum();
            *o += g * (inv_scale * bx * boundary_taper(&grid, &x[..dim]));
        }
    }
    Ok(Field::from_raw(grid, out))
}

/// One-shot propagation to each time of a sorted list; results do not depend on
/// evaluation order.
pub fn time_series(model: &OuModel, u0: &Field, times: &[f64], cfg: &PropagatorConfig) -> Result<Vec<Field>> {
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(OuError::InvalidArgument("times must be finite and >= 0".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OuError::InvalidArgument("times must be sorted".into()));
    }
    times.par_iter().map(|&t| propagate_fourier(model, u0, t, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::norm_l2;

    fn gaussian(grid: GridSpec, sigma: f64, centre: f64) -> Field {
        Field::from_real_fn(grid, |x| {
            let r2: f64 = x.iter().enumerate().map(|(i, v)| (v - if i == 0 { centre } else { 0.0 }).powi(2)).sum();
            (-0.5 * r2 / (sigma * sigma)).exp()
        })
    }

    fn rel(a: &Field, b: &Field) -> f64 {
        norm_l2(&a.sub(b).unwrap()) / norm_l2(b)
    }

    #[test]
    fn symbol_integral_examples() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        assert_eq!(symbol_integral(&m, 1.0, &[0.0]).unwrap(), 0.0);
        let v = symbol_integral(&m, 1.0, &[1.0]).unwrap();
        let e2 = std::f64::consts::E.powi(2);
        assert!((v - (e2 - 1.0) / 2.0).abs() < 1e-9);
        for s in [0.3, 0.5, 1.0, 1.7] {
            let skew = OuModel::planar([1.0, 0.0, 0.0, 1.0], [0.0, 1.0, -1.0, 0.0], s).unwrap();
            let xi = [0.6, -1.1];
            let r2: f64 = xi.iter().map(|v| v * v).sum();
            let v = symbol_integral(&skew, 2.0, &xi).unwrap();
            assert!((v - 2.0 * r2.powf(s)).abs() < 1e-9, "s={s}");
        }
    }

    #[test]
    fn symbol_table_matches_simpson() {
        let m = OuModel::planar([1.0, 0.3, 0.3, 0.5], [-1.0, 0.4, -0.2, -0.7], 0.6).unwrap();
        let probes = vec![vec![3.0, -2.0]];
        let table = SymbolTable::new(&m, 1.3, 1e-12, &probes).unwrap();
        for xi in [[3.0, -2.0], [0.1, 0.2], [-5.0, 1.0]] {
            let a = table.eval(&xi);
            let b = symbol_integral_tol(&m, 1.3, &xi, 1e-12).unwrap();
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn prefilter_inverts_the_spline_matrix() {
        let d: Vec<Complex64> = (0..20).map(|i| Complex64::new((i as f64).sin(), 0.1 * i as f64)).collect();
        let mut c = d.clone();
        let mut work = vec![0.0; 20];
        spline_prefilter(&mut c, &mut work);
        for i in 0..20 {
            let left = if i > 0 { c[i - 1] } else { ZERO };
            let right = if i < 19 { c[i + 1] } else { ZERO };
            let back = (left + c[i] * 4.0 + right) / 6.0;
            assert!((back - d[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn identity_at_time_zero() {
        let m = OuModel::scalar(1.0, -1.0, 0.5).unwrap();
        let g = GridSpec::new(1, 10.0, 128).unwrap();
        let u0 = gaussian(g, 0.7, 0.3);
        let u = propagate_fourier(&m, &u0, 0.0, &PropagatorConfig::default()).unwrap();
        assert_eq!(u, u0);
    }

    #[test]
    fn scalar_gaussian_closed_form() {
        // u₀ = e^{-x²/(2σ²)}, B = -1, Q = 1: the kernel variance is v = 1 - e^{-2t}, so
        // u(t,x) = σ/√(σ²+v) · exp(-x²/(2 e^{2t}(σ²+v))).
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let g = GridSpec::new(1, 16.0, 512).unwrap();
        let sigma: f64 = 0.5;
        let u0 = gaussian(g, sigma, 0.0);
        let t: f64 = 0.7;
        let v = 1.0 - (-2.0 * t).exp();
        let var_t = (2.0 * t).exp() * (sigma * sigma + v);
        let amp = sigma / (sigma * sigma + v).sqrt();
        let want = Field::from_real_fn(g, |x| amp * (-0.5 * x[0] * x[0] / var_t).exp());
        let u = propagate_fourier(&m, &u0, t, &PropagatorConfig::default()).unwrap();
        assert!(rel(&u, &want) < 1e-8, "{}", rel(&u, &want));
        let k = propagate_kolmogorov(&m, &u0, t, &PropagatorConfig::default()).unwrap();
        assert!(rel(&k, &want) < 1e-8, "{}", rel(&k, &want));
    }

    #[test]
    fn kolmogorov_preserves_constants_and_moves_lines() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let g = GridSpec::new(1, 40.0, 512).unwrap();
        let ones = Field::from_real_fn(g, |_| 1.0);
        // The periodic extension of x jumps at ±L; local evaluation keeps the
        // jump from polluting the interior.
        let cfg = PropagatorConfig { kernel_upsample: 1, ..Default::default() };
        let u = propagate_kolmogorov(&m, &ones, 0.5, &cfg).unwrap();
        assert!(u.values().iter().all(|v| (v.re - 1.0).abs() < 1e-12));
        let line = Field::from_real_fn(g, |x| x[0]);
        let t: f64 = 0.5;
        let u = propagate_kolmogorov(&m, &line, t, &cfg).unwrap();
        let sigma = (1.0 - (-2.0 * t).exp()).sqrt();
        for i in 0..g.len() {
            let x = g.coord(i);
            if (-t).exp() * x.abs() + 8.0 * sigma + 4.0 < g.half_width() {
                assert!((u.values()[i].re - (-t).exp() * x).abs() < 1e-9, "x={x}");
            }
        }
    }

    #[test]
    fn kolmogorov_refuses_fractional_order() {
        let m = OuModel::scalar(1.0, -1.0, 0.5).unwrap();
        let g = GridSpec::new(1, 12.0, 64).unwrap();
        let r = propagate_kolmogorov(&m, &Field::zeros(g), 1.0, &PropagatorConfig::default());
        assert_eq!(r, Err(OuError::FractionalUnsupported(0.5)));
    }

    #[test]
    fn generator_on_gaussian() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let g = GridSpec::new(1, 12.0, 256).unwrap();
        let u0 = gaussian(g, 1.0, 0.0);
        let a = apply_generator(&m, &u0).unwrap();
        for i in 0..g.len() {
            let x = g.coord(i);
            let want = (2.0 * x * x - 1.0) * (-0.5 * x * x).exp();
            assert!((a.values()[i].re - want).abs() < 1e-10, "x={x}");
        }
        let zero = apply_generator(&m, &Field::zeros(g)).unwrap();
        assert!(zero.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn adjoint_is_exact() {
        let m = OuModel::planar([1.0, 0.2, 0.2, 0.6], [-0.5, 1.0, -1.0, -0.3], 0.7).unwrap();
        let g = GridSpec::new(2, 8.0, 32).unwrap();
        for interp in [Interp::Nearest, Interp::Linear, Interp::CubicSpline] {
            let cfg = PropagatorConfig { interp, oversample: 2, ..Default::default() };
            let p = FourierPropagator::new(&m, &g, 0.4, &cfg).unwrap();
            let a = Field::from_fn(g, |x| Complex64::new((x[0] * 0.7).sin(), (x[1] - x[0]).cos()));
            let b = Field::from_fn(g, |x| Complex64::new(x[0] * x[1], (0.3 * x[1]).sin()));
            let lhs = p.apply(&a).unwrap().inner(&b).unwrap();
            let rhs = a.inner(&p.apply_adjoint(&b).unwrap()).unwrap();
            assert!((lhs - rhs).norm() < 1e-11 * lhs.norm().max(1.0), "{interp}");
        }
    }

    #[test]
    fn time_series_checks_order() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let g = GridSpec::new(1, 10.0, 64).unwrap();
        let u0 = gaussian(g, 0.5, 0.0);
        let cfg = PropagatorConfig::default();
        assert!(time_series(&m, &u0, &[0.5, 0.1], &cfg).is_err());
        let out = time_series(&m, &u0, &[0.0], &cfg).unwrap();
        assert_eq!(out, vec![u0]);
    }
}
