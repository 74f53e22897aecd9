//! Forward observation of the semigroup on a set `ω`, its exact discrete
//! adjoint, Tikhonov reconstruction of `u₀` by conjugate gradients, and
//! empirical stability sweeps fitting `e ≈ C/|log η|^α`.

use std::cmp::Ordering;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{OuError, Result, Warning};
use crate::field::{norm_l2, Field, GridSpec};
use crate::matops::OuModel;
use crate::semigroup::{apply_generator, FourierPropagator, PropagatorConfig, FREQUENCY_LOSS_TOL};
use crate::thickset::{restrict, ObservationMask};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Trapezoid weights on `[0, T]` for samples at sorted `t₁ < … < tₙ = T`; the
/// first sample also stands for `[0, t₁]`, so constants integrate exactly.
pub fn time_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    if n == 0 {
        return w;
    }
    w[0] = times[0];
    for i in 1..n {
        let dt = times[i] - times[i - 1];
        w[i - 1] += 0.5 * dt;
        w[i] += 0.5 * dt;
    }
    w
}

/// Snapshots of `u` (and optionally of `z = ∂ₜu`) on `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationData {
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub derivative_snapshots: Option<Vec<Field>>,
    pub noise_level: f64,
    pub seed: u64,
    /// Plain `(Σᵢ ‖δᵢ‖²)^{1/2}` of the added perturbation, the scale the
    /// discrepancy principle compares against.
    pub noise_misfit: f64,
    /// `L²(0,T;L²(ω))` norm of the perturbation.
    pub noise_l2: f64,
    /// `H¹(0,T;L²(ω))` norm of the perturbation, when the derivative channel exists.
    pub noise_h1: Option<f64>,
}

impl ObservationData {
    fn validate(&self, mask: &ObservationMask) -> Result<()> {
        let n = self.times.len();
        if self.snapshots.len() != n || self.derivative_snapshots.as_ref().is_some_and(|d| d.len() != n) {
            return Err(OuError::InvalidArgument(format!("{n} times but {} snapshots", self.snapshots.len())));
        }
        for f in self.snapshots.iter().chain(self.derivative_snapshots.iter().flatten()) {
            if f.grid() != mask.grid() {
                return Err(OuError::GridMismatch);
            }
        }
        Ok(())
    }
}

/// `u₀ ↦ (1_ω T(tᵢ)u₀)ᵢ` with precomputed propagators.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    model: OuModel,
    mask: ObservationMask,
    times: Vec<f64>,
    props: Vec<FourierPropagator>,
}

impl ObservationOperator {
    pub fn new(model: &OuModel, mask: &ObservationMask, times: &[f64], cfg: &PropagatorConfig) -> Result<Self> {
        if times.is_empty() {
            return Err(OuError::InvalidArgument("need at least one observation time".into()));
        }
        if times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OuError::InvalidArgument(format!(
                "observation times must be positive and strictly increasing, got {times:?}"
            )));
        }
        let props = times
            .par_iter()
            .map(|&t| FourierPropagator::new(model, mask.grid(), t, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model: model.clone(), mask: mask.clone(), times: times.to_vec(), props })
    }

    pub fn model(&self) -> &OuModel {
        &self.model
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn grid(&self) -> &GridSpec {
        self.mask.grid()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Horizon `T`, the last observation time.
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn forward_values(&self, u0: &[Complex64]) -> Vec<Vec<Complex64>> {
        self.props
            .iter()
            .map(|p| {
                let mut v = p.apply_values(u0);
                self.mask.apply(&mut v);
                v
            })
            .collect()
    }

    fn adjoint_values(&self, d: &[Vec<Complex64>]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.grid().len()];
        for (p, di) in self.props.iter().zip(d) {
            let mut masked = di.clone();
            self.mask.apply(&mut masked);
            for (o, v) in out.iter_mut().zip(p.apply_adjoint_values(&masked)) {
                *o += v;
            }
        }
        out
    }

    /// Masked snapshots `1_ω T(tᵢ)u₀`.
    pub fn apply(&self, u0: &Field) -> Result<Vec<Field>> {
        self.check(u0)?;
        self.forward_values(u0.values()).into_iter().map(|v| Field::new(*self.grid(), v)).collect()
    }

    /// `Σᵢ T(tᵢ)* 1_ω dᵢ`, the exact adjoint of [`apply`](Self::apply) for the
    /// grid inner product summed over snapshots.
    pub fn adjoint(&self, d: &[Field]) -> Result<Field> {
        if d.len() != self.times.len() {
            return Err(OuError::InvalidArgument(format!("{} snapshots for {} times", d.len(), self.times.len())));
        }
        for f in d {
            self.check(f)?;
        }
        let values: Vec<Vec<Complex64>> = d.iter().map(|f| f.values().to_vec()).collect();
        Field::new(*self.grid(), self.adjoint_values(&values))
    }

    /// Clean data, with `z = T(tᵢ)𝒜u₀` on `ω` when `with_derivative` is set.
    pub fn observe(&self, u0: &Field, with_derivative: bool) -> Result<ObservationData> {
        let snapshots = self.apply(u0)?;
        let derivative_snapshots =
            if with_derivative { Some(self.apply(&apply_generator(&self.model, u0)?)?) } else { None };
        Ok(ObservationData {
            times: self.times.clone(),
            snapshots,
            derivative_snapshots,
            noise_level: 0.0,
            seed: 0,
            noise_misfit: 0.0,
            noise_l2: 0.0,
            noise_h1: None,
        })
    }

    /// `FrequencyBoxExceeded` warnings for `u₀` at each observation time.
    pub fn warnings(&self, u0: &Field) -> Result<Vec<Warning>> {
        let mut out = Vec::new();
        for p in &self.props {
            let lost = p.lost_fraction(u0)?;
            if lost > FREQUENCY_LOSS_TOL {
                out.push(Warning::FrequencyBoxExceeded { lost_fraction: lost });
            }
        }
        Ok(out)
    }

    /// Tikhonov reconstruction with a fixed weight.
    pub fn reconstruct(
        &self,
        data: &ObservationData,
        alpha_reg: f64,
        solver: &CgSettings,
    ) -> Result<ReconstructionResult> {
        data.validate(&self.mask)?;
        let d: Vec<Vec<Complex64>> = data.snapshots.iter().map(|f| f.values().to_vec()).collect();
        let start = vec![ZERO; self.grid().len()];
        self.cgls(&d, alpha_reg, solver, start)
    }

    /// Tikhonov reconstruction with the weight chosen by `rule`.
    pub fn reconstruct_with(
        &self,
        data: &ObservationData,
        rule: AlphaRule,
        solver: &CgSettings,
    ) -> Result<ReconstructionResult> {
        match rule {
            AlphaRule::Fixed(alpha) => self.reconstruct(data, alpha, solver),
            AlphaRule::Discrepancy { factor, alpha_max, steps } => {
                if !(factor >= 1.0) || !(alpha_max > 0.0) || steps == 0 {
                    return Err(OuError::InvalidArgument(format!(
                        "discrepancy rule needs factor >= 1, alpha_max > 0, steps >= 1; got {factor}, {alpha_max}, {steps}"
                    )));
                }
                data.validate(&self.mask)?;
                let d: Vec<Vec<Complex64>> = data.snapshots.iter().map(|f| f.values().to_vec()).collect();
                let target = factor * data.noise_misfit;
                let mut start = vec![ZERO; self.grid().len()];
                let mut last = None;
                // Largest weight first, each solve warm-started from the previous one.
                for k in 0..steps {
                    let alpha = alpha_max * 10f64.powf(-0.5 * k as f64);
                    let res = self.cgls(&d, alpha, solver, start)?;
                    if res.misfit <= target {
                        return Ok(res);
                    }
                    start = res.u0_hat.values().to_vec();
                    last = Some(res);
                }
                Ok(last.expect("steps >= 1"))
            }
        }
    }

    /// CGLS on `min ‖Fu - d‖² + α‖u‖²`.
    fn cgls(
        &self,
        d: &[Vec<Complex64>],
        alpha: f64,
        solver: &CgSettings,
        start: Vec<Complex64>,
    ) -> Result<ReconstructionResult> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(OuError::InvalidArgument(format!("alpha_reg = {alpha} must be > 0")));
        }
        solver.validate()?;
        let h = self.grid().cell_volume();
        let dot = |a: &[Complex64], b: &[Complex64]| h * a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum::<f64>();
        let data_dot =
            |a: &[Vec<Complex64>], b: &[Vec<Complex64>]| a.iter().zip(b).map(|(x, y)| dot(x, y)).sum::<f64>();

        let mut x = start;
        let fx = self.forward_values(&x);
        let mut r: Vec<Vec<Complex64>> =
            d.iter().zip(&fx).map(|(di, fi)| di.iter().zip(fi).map(|(a, b)| a - b).collect()).collect();
        let normal = |r: &[Vec<Complex64>], x: &[Complex64]| -> Vec<Complex64> {
            let mut s = self.adjoint_values(r);
            s.iter_mut().zip(x).for_each(|(si, xi)| *si -= xi * alpha);
            s
        };
        let mut s = normal(&r, &x);
        let rhs_norm = dot(&self.adjoint_values(d), &self.adjoint_values(d)).sqrt();
        let objective = |r: &[Vec<Complex64>], x: &[Complex64]| (data_dot(r, r) + alpha * dot(x, x)).sqrt();

        let mut p = s.clone();
        let mut gamma = dot(&s, &s);
        let mut history = vec![objective(&r, &x)];
        let mut iterations = 0;
        let mut converged = rhs_norm == 0.0 || gamma.sqrt() <= solver.tol * rhs_norm;
        while !converged && iterations < solver.max_iter {
            let q = self.forward_values(&p);
            let delta = data_dot(&q, &q) + alpha * dot(&p, &p);
            if !(delta > 0.0) {
                break;
            }
            let step = gamma / delta;
            let x_new: Vec<Complex64> = x.iter().zip(&p).map(|(a, b)| a + b * step).collect();
            let r_new: Vec<Vec<Complex64>> =
                r.iter().zip(&q).map(|(ri, qi)| ri.iter().zip(qi).map(|(a, b)| a - b * step).collect()).collect();
            let j = objective(&r_new, &x_new);
            // In exact arithmetic the objective falls monotonically; a rise means
            // the iteration has reached the rounding floor.
            if j > *history.last().unwrap() {
                break;
            }
            x = x_new;
            r = r_new;
            history.push(j);
            iterations += 1;
            s = normal(&r, &x);
            let gamma_new = dot(&s, &s);
            converged = gamma_new.sqrt() <= solver.tol * rhs_norm;
            let beta = gamma_new / gamma;
            gamma = gamma_new;
            p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + *pi * beta);
        }
        let final_residual = if rhs_norm == 0.0 { 0.0 } else { gamma.sqrt() / rhs_norm };
        if !converged {
            log::warn!(
                "conjugate gradients stopped after {iterations} iterations at relative residual {final_residual:.3e}"
            );
        }
        Ok(ReconstructionResult {
            u0_hat: Field::new(*self.grid(), x)?,
            relative_error: None,
            residual_history: history,
            misfit: data_dot(&r, &r).sqrt(),
            alpha_reg: alpha,
            cg_iterations: iterations,
            converged,
            final_residual,
        })
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.grid() != self.grid() {
            return Err(OuError::GridMismatch);
        }
        Ok(())
    }
}

/// Stopping rule of the conjugate gradient iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub max_iter: usize,
    /// Relative residual `‖F*(d - Fu) - αu‖ / ‖F*d‖` to stop at.
    pub tol: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-10 }
    }
}

impl CgSettings {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(OuError::InvalidArgument(format!("cg_tol = {} must be > 0", self.tol)));
        }
        Ok(())
    }
}

/// How the Tikhonov weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaRule {
    Fixed(f64),
    /// Largest `α = alpha_max·10^{-k/2}`, `k < steps`, whose misfit is within
    /// `factor` times the noise; the smallest weight when none is.
    Discrepancy {
        factor: f64,
        alpha_max: f64,
        steps: usize,
    },
}

impl Default for AlphaRule {
    fn default() -> Self {
        AlphaRule::Discrepancy { factor: 1.1, alpha_max: 1.0, steps: 25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub u0_hat: Field,
    /// `‖û₀ - u₀‖/‖u₀‖`, filled in by [`compare`](Self::compare).
    pub relative_error: Option<f64>,
    /// `(‖Fu - d‖² + α‖u‖²)^{1/2}` per iteration, starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// Final `‖Fû₀ - d‖`.
    pub misfit: f64,
    pub alpha_reg: f64,
    pub cg_iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
}

impl ReconstructionResult {
    /// Records and returns the relative error against a known `u₀`.
    pub fn compare(&mut self, truth: &Field) -> Result<f64> {
        let e = norm_l2(&self.u0_hat.sub(truth)?);
        let t = norm_l2(truth);
        let rel = if t == 0.0 { e } else { e / t };
        self.relative_error = Some(rel);
        Ok(rel)
    }
}

/// Clean forward data; see [`ObservationOperator::observe`].
pub fn forward_observe(
    model: &OuModel,
    u0: &Field,
    mask: &ObservationMask,
    times: &[f64],
    cfg: &PropagatorConfig,
    with_derivative: bool,
) -> Result<ObservationData> {
    ObservationOperator::new(model, mask, times, cfg)?.observe(u0, with_derivative)
}

/// `Σᵢ T(tᵢ)* 1_ω dᵢ`.
pub fn adjoint_observe(
    model: &OuModel,
    data: &ObservationData,
    mask: &ObservationMask,
    cfg: &PropagatorConfig,
) -> Result<Field> {
    data.validate(mask)?;
    ObservationOperator::new(model, mask, &data.times, cfg)?.adjoint(&data.snapshots)
}

/// Tikhonov reconstruction with default propagator settings.
pub fn tikhonov_reconstruct(
    model: &OuModel,
    data: &ObservationData,
    mask: &ObservationMask,
    alpha_reg: f64,
    cg_max: usize,
    cg_tol: f64,
) -> Result<ReconstructionResult> {
    let op = ObservationOperator::new(model, mask, &data.times, &PropagatorConfig::default())?;
    op.reconstruct(data, alpha_reg, &CgSettings { max_iter: cg_max, tol: cg_tol })
}

fn channel_l2(times: &[f64], fields: &[Field]) -> f64 {
    time_weights(times).iter().zip(fields).map(|(w, f)| w * norm_l2(f).powi(2)).sum::<f64>().sqrt()
}

/// Time-trapezoid `L²(0,T;L²(ω))` norm of the snapshots.
pub fn observation_norm_l2(data: &ObservationData) -> f64 {
    channel_l2(&data.times, &data.snapshots)
}

/// `(‖u‖_{L²(0,T;L²(ω))}, ‖u‖_{H¹(0,T;L²(ω))})`.
pub fn observation_norms(data: &ObservationData) -> Result<(f64, f64)> {
    let l2 = observation_norm_l2(data);
    let z = data.derivative_snapshots.as_ref().ok_or(OuError::MissingDerivative)?;
    let dz = channel_l2(&data.times, z);
    Ok((l2, l2.hypot(dz)))
}

/// `‖T(T)u₀‖_{L²} / ‖u‖_{L²(0,T;L²(ω))}`, an empirical stand-in for the
/// observability constant on one datum.
pub fn observability_ratio(op: &ObservationOperator, u0: &Field) -> Result<f64> {
    let data = op.observe(u0, false)?;
    let last = op.props.last().unwrap().apply(u0)?;
    let denom = observation_norm_l2(&data);
    if denom == 0.0 {
        return Err(OuError::DegenerateNorm("no signal on the observation set".into()));
    }
    Ok(norm_l2(&last) / denom)
}

fn gaussian_like(fields: &[Field], mask: &ObservationMask, rng: &mut ChaCha8Rng) -> Vec<Field> {
    fields
        .iter()
        .map(|f| {
            let g = Field::from_fn(*f.grid(), |_| Complex64::new(StandardNormal.sample(rng), 0.0));
            restrict(&g, mask).expect("grids checked")
        })
        .collect()
}

fn perturb(times: &[f64], clean: &[Field], noise: &[Field], level: f64) -> (Vec<Field>, Vec<Field>) {
    let raw = channel_l2(times, noise);
    let scale = if raw == 0.0 { 0.0 } else { level * channel_l2(times, clean) / raw };
    let noise: Vec<Field> = noise.iter().map(|n| n.scaled(scale)).collect();
    let noisy = clean.iter().zip(&noise).map(|(c, n)| c.add_scaled(1.0, n).expect("same grid")).collect();
    (noisy, noise)
}

/// Adds Gaussian noise on `ω` scaled to `level` times the clean `L²(0,T;L²(ω))`
/// norm, independently per channel. Deterministic in `seed`.
pub fn add_noise(data: &ObservationData, mask: &ObservationMask, level: f64, seed: u64) -> Result<ObservationData> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(OuError::InvalidArgument(format!("noise level {level} must be >= 0")));
    }
    data.validate(mask)?;
    if level == 0.0 {
        return Ok(ObservationData { seed, ..data.clone() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = gaussian_like(&data.snapshots, mask, &mut rng);
    let (snapshots, noise) = perturb(&data.times, &data.snapshots, &raw, level);
    let noise_misfit = noise.iter().map(|n| norm_l2(n).powi(2)).sum::<f64>().sqrt();
    let noise_l2 = channel_l2(&data.times, &noise);
    let (derivative_snapshots, noise_h1) = match &data.derivative_snapshots {
        Some(z) => {
            let raw = gaussian_like(z, mask, &mut rng);
            let (noisy, dn) = perturb(&data.times, z, &raw, level);
            (Some(noisy), Some(noise_l2.hypot(channel_l2(&data.times, &dn))))
        }
        None => (None, None),
    };
    Ok(ObservationData {
        times: data.times.clone(),
        snapshots,
        derivative_snapshots,
        noise_level: level,
        seed,
        noise_misfit,
        noise_l2,
        noise_h1,
    })
}

/// One reconstruction of a stability sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: f64,
    pub seed: u64,
    pub eta_l2: f64,
    /// NaN when no derivative channel was observed.
    pub eta_h1: f64,
    /// `‖û₀ - u₀‖_{L²}`.
    pub error: f64,
    pub alpha_reg: f64,
    pub cg_iterations: usize,
}

/// Per-level medians and the fit `log e = log C - α log|log η|`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityFit {
    pub noise_levels: Vec<f64>,
    pub data_norms: Vec<f64>,
    pub recon_errors: Vec<f64>,
    pub fitted_c: f64,
    pub fitted_alpha: f64,
    /// NaN when the fit is degenerate (no spread in `η`, or fewer than two usable levels).
    pub fit_r2: f64,
    pub rows: Vec<SweepRow>,
}

impl StabilityFit {
    pub fn is_degenerate(&self) -> bool {
        self.fit_r2.is_nan()
    }

    /// Whether the median error never falls as the noise level grows.
    pub fn errors_monotone(&self) -> bool {
        let mut idx: Vec<usize> = (0..self.noise_levels.len()).collect();
        idx.sort_by(|&a, &b| self.noise_levels[a].total_cmp(&self.noise_levels[b]));
        idx.windows(2).all(|w| self.recon_errors[w[1]] >= self.recon_errors[w[0]])
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least squares `y = a + b x`; returns `(a, b, R²)` or `None` without spread in `x`.
fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 1e-24 * (1.0 + mx * mx)) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sse: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Some((a, b, r2))
}

/// Fits `e ≈ C/|log η|^α` to per-level medians, using the points with `0 < η < 1`
/// and `e > 0`.
pub fn fit_log_stability(etas: &[f64], errors: &[f64]) -> (f64, f64, f64) {
    let (x, y): (Vec<f64>, Vec<f64>) = etas
        .iter()
        .zip(errors)
        .filter(|(&eta, &e)| eta > 0.0 && eta < 1.0 && e > 0.0)
        .map(|(&eta, &e)| (eta.ln().abs().ln(), e.ln()))
        .unzip();
    match linear_fit(&x, &y) {
        Some((a, b, r2)) => (a.exp(), -b, r2),
        None => (f64::NAN, f64::NAN, f64::NAN),
    }
}

/// Reconstructs `u0_truth` from noisy data at every `(level, seed)` and fits the
/// logarithmic stability law. `η` is the `L²` data norm of the noise for `s = 1`
/// and the `H¹` one otherwise.
pub fn stability_sweep(
    op: &ObservationOperator,
    u0_truth: &Field,
    noise_levels: &[f64],
    alpha_rule: AlphaRule,
    seeds: &[u64],
    solver: &CgSettings,
) -> Result<StabilityFit> {
    let s = op.model().s();
    if s <= 0.5 && !op.mask().is_full() {
        return Err(OuError::RegimeRefused(format!(
            "s = {s} <= 1/2 with partial observation: outside the observability regime, where final-state \
             observability from a proper subset fails"
        )));
    }
    if noise_levels.len() < 4 {
        return Err(OuError::InvalidArgument(format!("need at least 4 noise levels, got {}", noise_levels.len())));
    }
    if seeds.is_empty() {
        return Err(OuError::InvalidArgument("need at least one seed".into()));
    }
    let clean = op.observe(u0_truth, true)?;
    let cells: Vec<(usize, u64)> = (0..noise_levels.len()).flat_map(|i| seeds.iter().map(move |&sd| (i, sd))).collect();
    let mut rows = cells
        .par_iter()
        .map(|&(i, seed)| -> Result<(usize, SweepRow)> {
            let level = noise_levels[i];
            let noisy = add_noise(&clean, op.mask(), level, seed)?;
            let res = op.reconstruct_with(&noisy, alpha_rule, solver)?;
            let error = norm_l2(&res.u0_hat.sub(u0_truth)?);
            Ok((
                i,
                SweepRow {
                    level,
                    seed,
                    eta_l2: noisy.noise_l2,
                    eta_h1: noisy.noise_h1.unwrap_or(f64::NAN),
                    error,
                    alpha_reg: res.alpha_reg,
                    cg_iterations: res.cg_iterations,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.seed.cmp(&b.1.seed)));

    let mut data_norms = Vec::with_capacity(noise_levels.len());
    let mut recon_errors = Vec::with_capacity(noise_levels.len());
    for i in 0..noise_levels.len() {
        let level_rows = rows.iter().filter(|(j, _)| *j == i).map(|(_, r)| r);
        let (mut etas, mut errs): (Vec<f64>, Vec<f64>) =
            level_rows.map(|r| (if s == 1.0 { r.eta_l2 } else { r.eta_h1 }, r.error)).unzip();
        data_norms.push(median(&mut etas));
        recon_errors.push(median(&mut errs));
    }
    let (fitted_c, fitted_alpha, fit_r2) = fit_log_stability(&data_norms, &recon_errors);
    Ok(StabilityFit {
        noise_levels: noise_levels.to_vec(),
        data_norms,
        recon_errors,
        fitted_c,
        fitted_alpha,
        fit_r2,
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::invariant_density;
    use crate::thickset::{build_mask, ThickSetSpec};

    fn setup(mask_spec: ThickSetSpec, times: &[f64]) -> (ObservationOperator, Field) {
        let grid = GridSpec::new(1, 8.0, 128).unwrap();
        let model = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
        let mask = build_mask(&mask_spec, grid).unwrap();
        let op = ObservationOperator::new(&model, &mask, times, &PropagatorConfig::default()).unwrap();
        let u0 = Field::from_real_fn(grid, |x| (-(x[0] - 0.5).powi(2)).exp() * (1.0 + 0.3 * x[0]));
        (op, u0)
    }

    #[test]
    fn time_weights_integrate_constants() {
        let w = time_weights(&[0.1, 0.4, 0.5, 1.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(time_weights(&[2.0]), vec![2.0]);
    }

    #[test]
    fn zero_data_and_zero_datum() {
        let (op, u0) = setup(ThickSetSpec::PeriodicSlabs { period: 1.0, width: 0.5 }, &[0.2, 0.6]);
        let zero = Field::zeros(*u0.grid());
        let data = op.observe(&zero, true).unwrap();
        assert!(data.snapshots.iter().all(|f| f.max_abs() == 0.0));
        assert_eq!(observation_norms(&data).unwrap(), (0.0, 0.0));
        assert_eq!(op.adjoint(&data.snapshots).unwrap().max_abs(), 0.0);
        let res = op.reconstruct(&data, 1e-3, &CgSettings::default()).unwrap();
        assert_eq!(res.u0_hat.max_abs(), 0.0);
        assert!(res.converged);
    }

    #[test]
    fn full_mask_single_time_is_propagation() {
        let (op, u0) = setup(ThickSetSpec::Full, &[0.5]);
        let data = op.observe(&u0, false).unwrap();
        let direct = crate::semigroup::propagate_fourier(op.model(), &u0, 0.5, &PropagatorConfig::default()).unwrap();
        assert_eq!(data.snapshots[0], direct);
    }

    #[test]
    fn adjoint_dot_product() {
        let (op, u0) = setup(ThickSetSpec::PeriodicSlabs { period: 1.0, width: 0.5 }, &[0.1, 0.3, 1.0]);
        let grid = *u0.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut noise = |_: &[f64]| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let u = Field::from_fn(grid, &mut noise);
        let v: Vec<Field> = (0..3).map(|_| Field::from_fn(grid, &mut noise)).collect();
        let fu = op.apply(&u).unwrap();
        let lhs: Complex64 = fu.iter().zip(&v).map(|(a, b)| a.inner(b).unwrap()).sum();
        let rhs = u.inner(&op.adjoint(&v).unwrap()).unwrap();
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn self_adjoint_in_weighted_space() {
        // With Q = 1, B = -1 the semigroup is symmetric in L²_μ, so T*(ρv) = ρ·Tv.
        let (op, _) = setup(ThickSetSpec::Full, &[0.4]);
        let grid = *op.grid();
        let rho = invariant_density(op.model(), &grid).unwrap();
        let weigh =
            |f: &Field| Field::new(grid, f.values().iter().zip(rho.values()).map(|(a, r)| a * r.re).collect()).unwrap();
        let v = Field::from_real_fn(grid, |x| (-0.3 * x[0] * x[0]).exp() * (1.0 + 0.5 * x[0]));
        let back = op.adjoint(&[weigh(&v)]).unwrap();
        let expected = weigh(&op.apply(&v).unwrap().remove(0));
        // Periodic wrap-around spoils the identity near the box edge.
        let defect = (0..grid.len())
            .filter(|&i| grid.coord(i).abs() <= 0.5 * grid.half_width())
            .map(|i| (back.values()[i] - expected.values()[i]).norm())
            .fold(0.0, f64::max)
            / expected.max_abs();
        assert!(defect < 1e-7, "{defect}");
    }

    #[test]
    fn noise_scaling_and_determinism() {
        let (op, u0) = setup(ThickSetSpec::PeriodicSlabs { period: 1.0, width: 0.5 }, &[0.2, 0.5, 1.0]);
        let clean = op.observe(&u0, true).unwrap();
        assert_eq!(add_noise(&clean, op.mask(), 0.0, 3).unwrap().snapshots, clean.snapshots);
        let a = add_noise(&clean, op.mask(), 0.05, 3).unwrap();
        assert_eq!(a, add_noise(&clean, op.mask(), 0.05, 3).unwrap());
        assert_ne!(a.snapshots, add_noise(&clean, op.mask(), 0.05, 4).unwrap().snapshots);
        let ratio = a.noise_l2 / observation_norm_l2(&clean);
        assert!((ratio - 0.05).abs() < 1e-9);
        // Perturbation lives on ω only.
        for (noisy, c) in a.snapshots.iter().zip(&clean.snapshots) {
            for (i, &m) in op.mask().mask().iter().enumerate() {
                if !m {
                    assert_eq!(noisy.values()[i], c.values()[i]);
                }
            }
        }
        let (l2, h1) = observation_norms(&a).unwrap();
        assert!(h1 >= l2);
    }

    #[test]
    fn constant_snapshots_norm() {
        let grid = GridSpec::new(1, 4.0, 16).unwrap();
        let f = Field::from_real_fn(grid, |x| x[0]);
        let data = ObservationData {
            times: vec![0.25, 0.5, 2.0],
            snapshots: vec![f.clone(), f.clone(), f.clone()],
            derivative_snapshots: None,
            noise_level: 0.0,
            seed: 0,
            noise_misfit: 0.0,
            noise_l2: 0.0,
            noise_h1: None,
        };
        assert!((observation_norm_l2(&data) - 2f64.sqrt() * norm_l2(&f)).abs() < 1e-12);
        assert_eq!(observation_norms(&data), Err(OuError::MissingDerivative));
    }

    #[test]
    fn residual_history_nonincreasing() {
        let (op, u0) = setup(ThickSetSpec::PeriodicSlabs { period: 1.0, width: 0.5 }, &[0.1, 0.5, 1.0]);
        let data = add_noise(&op.observe(&u0, false).unwrap(), op.mask(), 0.01, 1).unwrap();
        let res = op.reconstruct(&data, 1e-6, &CgSettings { max_iter: 200, tol: 1e-12 }).unwrap();
        assert!(res.residual_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.cg_iterations > 0);
    }

    #[test]
    fn refuses_low_order_partial_observation() {
        let grid = GridSpec::new(1, 8.0, 128).unwrap();
        let model = OuModel::scalar(1.0, -1.0, 0.4).unwrap();
        let mask = build_mask(&ThickSetSpec::PeriodicSlabs { period: 1.0, width: 0.5 }, grid).unwrap();
        let op = ObservationOperator::new(&model, &mask, &[0.5, 1.0], &PropagatorConfig::default()).unwrap();
        let u0 = Field::from_real_fn(grid, |x| (-x[0] * x[0]).exp());
        let err =
            stability_sweep(&op, &u0, &[1e-4, 1e-3, 1e-2, 1e-1], AlphaRule::default(), &[1], &CgSettings::default());
        assert!(matches!(err, Err(OuError::RegimeRefused(_))));
    }

    #[test]
    fn degenerate_fit_is_flagged() {
        let (c, a, r2) = fit_log_stability(&[1e-3; 4], &[0.1, 0.2, 0.1, 0.3]);
        assert!(c.is_nan() && a.is_nan() && r2.is_nan());
        // Exact law recovered.
        let etas = [1e-6, 1e-4, 1e-3, 1e-2];
        let errs: Vec<f64> = etas.iter().map(|e: &f64| 2.0 / e.ln().abs().powf(1.5)).collect();
        let (c, a, r2) = fit_log_stability(&etas, &errs);
        assert!((c - 2.0).abs() < 1e-12 && (a - 1.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
