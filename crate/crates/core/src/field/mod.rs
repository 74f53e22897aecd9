//! Truncated periodic grids, sampled fields and their discrete Fourier
//! transforms, plain and weighted norms, the invariant density, and the
//! random admissible initial data used by the experiments.
//!
//! The Fourier convention is `ĝ(ξ) = ∫ g(x) e^{-i x·ξ} dx`, discretized by the
//! trapezoidal rule on `[-L, L)ᴺ` with frequencies `ξ_k = πk/L`,
//! `k ∈ {-n/2, …, n/2-1}`. Spectral arrays are stored centered: index `m`
//! holds `k = m - n/2` along each axis.

pub mod io;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OuError, Result, Warning};
use crate::fft;
use crate::matops::{gramian_qinf, spectral_norm, Matrix, OuModel};

/// Relative boundary amplitude below which a field counts as decayed.
pub const BOUNDARY_DECAY_TOL: f64 = 1e-8;

/// Largest acceptable missing mass of the invariant density on the box.
pub const DENSITY_MASS_TOL: f64 = 1e-6;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Uniform grid on `[-L, L)ᴺ` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    half_width: f64,
    n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(OuError::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(OuError::InvalidGrid(format!("half width {half_width} must be > 0")));
        }
        if !n.is_power_of_two() || !(16..=4096).contains(&n) {
            return Err(OuError::InvalidGrid(format!("points per axis {n} must be a power of two in [16, 4096]")));
        }
        Ok(Self { dim, half_width, n })
    }

    /// Grid whose half width follows [`auto_half_width`].
    pub fn auto(model: &OuModel, horizon: f64, n: usize) -> Result<Self> {
        Self::new(model.dim(), auto_half_width(model, horizon), n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points, `nᴺ`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn freq_spacing(&self) -> f64 {
        PI / self.half_width
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Angular frequency at centered index `m`.
    pub fn freq(&self, m: usize) -> f64 {
        (m as f64 - (self.n / 2) as f64) * self.freq_spacing()
    }

    /// Per-axis indices of a flat index (axis 0 is the slow one).
    pub fn unravel(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    /// Spatial point of a flat index; unused components are zero.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let [i, j] = self.unravel(idx);
        if self.dim == 1 {
            [self.coord(i), 0.0]
        } else {
            [self.coord(i), self.coord(j)]
        }
    }

    /// Frequency vector of a flat centered index.
    pub fn freq_point(&self, idx: usize) -> [f64; 2] {
        let [i, j] = self.unravel(idx);
        if self.dim == 1 {
            [self.freq(i), 0.0]
        } else {
            [self.freq(i), self.freq(j)]
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let [i, j] = self.unravel(idx);
        let edge = |k: usize| k == 0 || k == self.n - 1;
        edge(i) || (self.dim == 2 && edge(j))
    }
}

/// Half width `L = 8·max(√λmax(Q∞), √(2T‖Q‖^{1/(2s)} + 1))` rounded up to one
/// decimal; the first term is dropped when the drift is not Hurwitz.
pub fn auto_half_width(model: &OuModel, horizon: f64) -> f64 {
    let diffusive = (2.0 * horizon.max(0.0) * spectral_norm(model.q()).powf(0.5 / model.s()) + 1.0).sqrt();
    let invariant = gramian_qinf(model)
        .map(|q_inf| nalgebra::SymmetricEigen::new(q_inf).eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt())
        .unwrap_or(0.0);
    (80.0 * invariant.max(diffusive)).ceil() / 10.0
}

/// Complex samples of a function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(OuError::InvalidArgument(format!(
                "field has {} samples, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(OuError::InvalidArgument("non-finite field sample".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![ZERO; grid.len()] }
    }

    pub fn from_fn<F: FnMut(&[f64]) -> Complex64>(grid: GridSpec, mut f: F) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let p = grid.point(idx);
                f(&p[..grid.dim()])
            })
            .collect();
        Self { grid, values }
    }

    pub fn from_real_fn<F: FnMut(&[f64]) -> f64>(grid: GridSpec, mut f: F) -> Self {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn from_real(grid: GridSpec, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Drops imaginary parts.
    pub fn to_real(&self) -> Field {
        Self { grid: self.grid, values: self.values.iter().map(|v| Complex64::new(v.re, 0.0)).collect() }
    }

    pub fn scaled(&self, a: f64) -> Field {
        Self { grid: self.grid, values: self.values.iter().map(|v| v * a).collect() }
    }

    /// `self - other`.
    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_grid(other)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() })
    }

    /// `self + a·other`.
    pub fn add_scaled(&self, a: f64, other: &Field) -> Result<Field> {
        self.check_grid(other)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(x, y)| x + y * a).collect() })
    }

    /// Grid-weighted inner product `hᴺ Σ f ḡ`.
    pub fn inner(&self, other: &Field) -> Result<Complex64> {
        self.check_grid(other)?;
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest boundary-ring amplitude relative to the largest amplitude.
    pub fn boundary_ratio(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let edge = (0..self.grid.len())
            .filter(|&i| self.grid.is_boundary(i))
            .map(|i| self.values[i].norm())
            .fold(0.0, f64::max);
        edge / peak
    }

    /// Fails with `DomainTooSmall` unless the field has decayed at the boundary.
    pub fn require_boundary_decay(&self, what: &str) -> Result<()> {
        let ratio = self.boundary_ratio();
        if ratio > BOUNDARY_DECAY_TOL {
            return Err(OuError::DomainTooSmall(format!(
                "{what} reaches {ratio:.3e} of its peak on the boundary of [-{L}, {L})^{N} (limit {BOUNDARY_DECAY_TOL:e})",
                L = self.grid.half_width(),
                N = self.grid.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(OuError::GridMismatch);
        }
        Ok(())
    }
}

/// Discrete Fourier coefficients on the centered frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(OuError::InvalidArgument(format!(
                "spectrum has {} coefficients, grid needs {}",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// `((Δξ/2π)ᴺ Σ|ĉ|²)^{1/2}`, equal to the L² norm of the samples by Parseval.
    pub fn norm(&self) -> f64 {
        let w = (self.grid.freq_spacing() / (2.0 * PI)).powi(self.grid.dim() as i32);
        (w * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }
}

pub fn forward_transform(f: &Field) -> SpectralField {
    let grid = f.grid;
    let mut c = f.values.clone();
    fft::dft_centered(&mut c, grid.n(), grid.dim());
    let w = grid.cell_volume();
    c.iter_mut().for_each(|v| *v *= w);
    SpectralField { grid, coeffs: c }
}

pub fn inverse_transform(spec: &SpectralField) -> Field {
    let grid = spec.grid;
    let mut v = spec.coeffs.clone();
    fft::dft_centered_adjoint(&mut v, grid.n(), grid.dim());
    let w = (1.0 / (grid.n() as f64 * grid.spacing())).powi(grid.dim() as i32);
    v.iter_mut().for_each(|x| *x *= w);
    Field { grid, values: v }
}

/// `‖f‖_{L²}` by the grid rule.
pub fn norm_l2(f: &Field) -> f64 {
    (f.grid.cell_volume() * f.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
}

/// `(∫|f|²ρ dx)^{1/2}` for a density sampled on the same grid.
pub fn norm_l2_mu(f: &Field, rho: &Field) -> Result<f64> {
    f.check_grid(rho)?;
    let s: f64 = f.values.iter().zip(&rho.values).map(|(v, r)| v.norm_sqr() * r.re).sum();
    Ok((f.grid.cell_volume() * s).sqrt())
}

/// L² norm restricted to the grid points where `mask` is set.
pub fn norm_l2_masked(f: &Field, mask: &[bool]) -> Result<f64> {
    if mask.len() != f.values.len() {
        return Err(OuError::GridMismatch);
    }
    let s: f64 = f.values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v.norm_sqr()).sum();
    Ok((f.grid.cell_volume() * s).sqrt())
}

/// Density of the invariant measure,
/// `ρ(x) = (4π)^{-N/2} (det Q∞)^{-1/2} e^{-¼⟨Q∞⁻¹x, x⟩}`, with its mass check.
pub fn invariant_density_checked(model: &OuModel, grid: &GridSpec) -> Result<(Field, Vec<Warning>)> {
    check_dims(model, grid)?;
    let q_inf = gramian_qinf(model)?;
    let inv = q_inf.clone().try_inverse().ok_or_else(|| OuError::InvalidModel("Q∞ is singular".into()))?;
    let n = model.dim() as i32;
    let norm = (4.0 * PI).powf(-0.5 * n as f64) / q_inf.determinant().sqrt();
    let rho = Field::from_real_fn(*grid, |x| norm * (-0.25 * quad_form(&inv, x)).exp());
    let mass: f64 = rho.values.iter().map(|v| v.re).sum::<f64>() * grid.cell_volume();
    let mut warnings = Vec::new();
    if (1.0 - mass).abs() > DENSITY_MASS_TOL {
        let w = Warning::DomainTooSmall {
            detail: format!("invariant density has mass {mass:.9} on the box (deficit {:.3e})", 1.0 - mass),
        };
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok((rho, warnings))
}

pub fn invariant_density(model: &OuModel, grid: &GridSpec) -> Result<Field> {
    invariant_density_checked(model, grid).map(|(rho, _)| rho)
}

/// `‖f e^{-⅛⟨Q∞⁻¹x,x⟩}‖_{H^σ}` computed spectrally with weight `(1+|ξ|²)^σ`.
pub fn norm_h_s_mu(f: &Field, model: &OuModel, s_order: f64) -> Result<f64> {
    check_dims(model, f.grid())?;
    if !(s_order >= 0.0) {
        return Err(OuError::InvalidArgument(format!("Sobolev order {s_order} must be >= 0")));
    }
    let q_inf = gramian_qinf(model)?;
    let inv = q_inf.try_inverse().ok_or_else(|| OuError::InvalidModel("Q∞ is singular".into()))?;
    let grid = f.grid;
    let weighted = Field {
        grid,
        values: f
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let p = grid.point(i);
                v * (-0.125 * quad_form(&inv, &p[..grid.dim()])).exp()
            })
            .collect(),
    };
    Ok(sobolev_norm(&weighted, s_order))
}

/// Plain `H^σ` norm `((2π)^{-N} ∫(1+|ξ|²)^σ |ĝ|² dξ)^{1/2}` on the grid.
pub fn sobolev_norm(g: &Field, s_order: f64) -> f64 {
    let spec = forward_transform(g);
    let grid = g.grid;
    let w = (grid.freq_spacing() / (2.0 * PI)).powi(grid.dim() as i32);
    let sum: f64 = spec
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let xi = grid.freq_point(i);
            let r2 = xi[0] * xi[0] + xi[1] * xi[1];
            (1.0 + r2).powf(s_order) * c.norm_sqr()
        })
        .sum();
    (w * sum).sqrt()
}

/// Which norm the admissible sampler normalizes to `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissibleNorm {
    /// `‖·‖_{H^{2ε}_μ}` (weighted setting, needs a Hurwitz drift).
    Weighted,
    /// Graph norm `‖u‖_{L²} + ‖𝒜u‖_{L²}` of the generator (Lebesgue setting).
    Lebesgue,
}

/// Envelope width of sampled data as a fraction of the half width.
pub const SAMPLER_ENVELOPE_FRACTION: f64 = 1.0 / 16.0;

/// Random smooth initial datum normalized to `bound_m` in the chosen admissibility norm.
///
/// Fourier coefficients on the lowest `n/4` modes per axis carry random phases and
/// amplitude `(1+|ξ|²)^{-(N+2)/2}`; the real part of the synthesized field is then
/// multiplied by a Gaussian envelope of width `L/16` so that it and its propagated
/// states decay at the box boundary.
pub fn sample_admissible(
    model: &OuModel,
    grid: &GridSpec,
    eps: f64,
    bound_m: f64,
    seed: u64,
    norm: AdmissibleNorm,
) -> Result<Field> {
    check_dims(model, grid)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(OuError::InvalidArgument(format!("eps = {eps} must lie in (0, 1)")));
    }
    if !(bound_m > 0.0 && bound_m.is_finite()) {
        return Err(OuError::InvalidArgument(format!("bound M = {bound_m} must be > 0")));
    }
    let shape = band_limited_shape(grid, seed);
    let size = match norm {
        AdmissibleNorm::Weighted => norm_h_s_mu(&shape, model, 2.0 * eps)?,
        AdmissibleNorm::Lebesgue => norm_l2(&shape) + norm_l2(&crate::semigroup::apply_generator(model, &shape)?),
    };
    if size == 0.0 {
        return Err(OuError::DegenerateNorm("sampled field vanished".into()));
    }
    Ok(shape.scaled(bound_m / size))
}

fn band_limited_shape(grid: &GridSpec, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let band = (n / 8) as i64;
    let dim = grid.dim();
    let mut coeffs = vec![ZERO; grid.len()];
    for (idx, c) in coeffs.iter_mut().enumerate() {
        let [i, j] = grid.unravel(idx);
        let k0 = i as i64 - (n / 2) as i64;
        let k1 = if dim == 2 { j as i64 - (n / 2) as i64 } else { 0 };
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        if k0.abs() < band && k1.abs() < band {
            let xi = grid.freq_point(idx);
            let amp = (1.0 + xi[0] * xi[0] + xi[1] * xi[1]).powf(-0.5 * (dim as f64 + 2.0));
            *c = Complex64::from_polar(amp, phase);
        }
    }
    let raw = inverse_transform(&SpectralField { grid: *grid, coeffs });
    let width = SAMPLER_ENVELOPE_FRACTION * grid.half_width();
    Field {
        grid: *grid,
        values: raw
            .values
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let p = grid.point(idx);
                let r2 = p[0] * p[0] + p[1] * p[1];
                Complex64::new(v.re * (-0.5 * r2 / (width * width)).exp(), 0.0)
            })
            .collect(),
    }
}

pub(crate) fn quad_form(m: &Matrix, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += m[(i, j)] * x[i] * x[j];
        }
    }
    s
}

pub(crate) fn check_dims(model: &OuModel, grid: &GridSpec) -> Result<()> {
    if model.dim() != grid.dim() {
        return Err(OuError::InvalidArgument(format!(
            "model dimension {} does not match grid dimension {}",
            model.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Standard deviations of the invariant measure along its principal axes.
pub fn invariant_std_max(model: &OuModel) -> Result<f64> {
    let q_inf = gramian_qinf(model)?;
    Ok((q_inf * 2.0).symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(l: f64, n: usize) -> GridSpec {
        GridSpec::new(1, l, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1, 1.0, 15).is_err());
        assert!(GridSpec::new(1, 1.0, 8).is_err());
        assert!(GridSpec::new(3, 1.0, 16).is_err());
        assert!(GridSpec::new(2, 0.0, 16).is_err());
        assert!(GridSpec::new(2, 4.0, 8192).is_err());
        let g = GridSpec::new(2, 4.0, 64).unwrap();
        assert_eq!(g.len(), 4096);
        assert!((g.spacing() - 0.125).abs() < 1e-15);
        assert!((g.freq(0) + PI / 4.0 * 32.0).abs() < 1e-12);
    }

    #[test]
    fn zero_field_transforms_to_zero() {
        let g = grid1(5.0, 32);
        let s = forward_transform(&Field::zeros(g));
        assert!(s.coeffs().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn gaussian_transform_matches_closed_form() {
        let g = grid1(20.0, 256);
        let f = Field::from_real_fn(g, |x| (-0.5 * x[0] * x[0]).exp());
        let s = forward_transform(&f);
        for (m, c) in s.coeffs().iter().enumerate() {
            let xi = g.freq(m);
            let want = (2.0 * PI).sqrt() * (-0.5 * xi * xi).exp();
            assert!((c - want).norm() < 1e-8, "m={m}");
        }
    }

    #[test]
    fn round_trip_2d() {
        let g = GridSpec::new(2, 3.0, 32).unwrap();
        let f = Field::from_fn(g, |x| Complex64::new((x[0] * 1.3).sin() + x[1], (x[1] * x[0]).cos()));
        let back = inverse_transform(&forward_transform(&f));
        let err = norm_l2(&back.sub(&f).unwrap()) / norm_l2(&f);
        assert!(err < 1e-12);
    }

    #[test]
    fn gaussian_l2_norm() {
        let g = grid1(20.0, 256);
        let f = Field::from_real_fn(g, |x| (-0.5 * x[0] * x[0]).exp());
        assert!((norm_l2(&f) - PI.powf(0.25)).abs() < 1e-12);
        assert_eq!(norm_l2(&Field::zeros(g)), 0.0);
    }

    #[test]
    fn density_of_standard_model() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let g = grid1(12.0, 256);
        let rho = invariant_density(&m, &g).unwrap();
        let mid = rho.values()[128].re;
        assert!((mid - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        for (i, v) in rho.values().iter().enumerate() {
            let x = g.coord(i);
            assert!((v.re - (-0.5 * x * x).exp() / (2.0 * PI).sqrt()).abs() < 1e-15);
        }
        let ones = Field::from_real_fn(g, |_| 1.0);
        assert!((norm_l2_mu(&ones, &rho).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_on_tiny_box_warns() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let (_, w) = invariant_density_checked(&m, &grid1(2.0, 64)).unwrap();
        assert!(matches!(w.as_slice(), [Warning::DomainTooSmall { .. }]));
    }

    #[test]
    fn density_requires_hurwitz() {
        let m = OuModel::scalar(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(invariant_density(&m, &grid1(5.0, 64)), Err(OuError::HurwitzViolation { .. })));
    }

    #[test]
    fn masked_norm_full_mask_is_plain_norm() {
        let g = grid1(4.0, 64);
        let f = Field::from_real_fn(g, |x| (x[0]).sin() * (-x[0] * x[0]).exp());
        assert_eq!(norm_l2_masked(&f, &[true; 64]).unwrap(), norm_l2(&f));
        assert_eq!(norm_l2_masked(&f, &[false; 64]).unwrap(), 0.0);
    }

    #[test]
    fn weighted_sobolev_order_zero_is_weighted_l2() {
        let m = OuModel::scalar(0.7, -0.4, 1.0).unwrap();
        let g = grid1(15.0, 256);
        let f = Field::from_real_fn(g, |x| (0.6 * x[0]).cos() * (-0.1 * x[0] * x[0]).exp());
        let q_inf = 0.7 / 0.8;
        let direct: f64 = (0..g.len())
            .map(|i| {
                let x = g.coord(i);
                f.values()[i].norm_sqr() * (-0.25 * x * x / q_inf).exp()
            })
            .sum::<f64>()
            * g.cell_volume();
        let h0 = norm_h_s_mu(&f, &m, 0.0).unwrap();
        assert!((h0 - direct.sqrt()).abs() < 1e-10 * h0);
        assert_eq!(norm_h_s_mu(&Field::zeros(g), &m, 1.3).unwrap(), 0.0);
    }

    #[test]
    fn sampler_is_deterministic_and_normalized() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let g = GridSpec::auto(&m, 1.0, 256).unwrap();
        let a = sample_admissible(&m, &g, 0.5, 2.0, 11, AdmissibleNorm::Weighted).unwrap();
        let b = sample_admissible(&m, &g, 0.5, 2.0, 11, AdmissibleNorm::Weighted).unwrap();
        assert_eq!(a, b);
        assert!((norm_h_s_mu(&a, &m, 1.0).unwrap() - 2.0).abs() < 1e-9 * 2.0);
        assert!(a.boundary_ratio() < BOUNDARY_DECAY_TOL);
        let c = sample_admissible(&m, &g, 0.5, 2.0, 12, AdmissibleNorm::Weighted).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn auto_half_width_rule() {
        let m = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        // max(√½, √3)·8 = 13.856… → 13.9
        assert!((auto_half_width(&m, 1.0) - 13.9).abs() < 1e-12);
        let skew = OuModel::planar([1.0, 0.0, 0.0, 1.0], [0.0, 1.0, -1.0, 0.0], 1.0).unwrap();
        assert!((auto_half_width(&skew, 0.0) - 8.0).abs() < 1e-12);
    }
}
