//! Observation sets: periodic slabs and cubes, random cell sets, grid masks,
//! sampled thickness certificates, and restriction of fields to the set.
//!
//! Thickness is checked on the periodic box, so windows wrap around. On the
//! truncated domain the periodic translates exhaust the distinct intersections
//! up to grid resolution; this is a certificate, not a proof over all of `ℝᴺ`.

pub mod io;

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OuError, Result};
use crate::field::{Field, GridSpec};

/// Smallest number of grid cells a thickness window may span per axis.
pub const MIN_CELLS_PER_WINDOW: usize = 8;

/// Relative tolerance for deciding on which side of a slab edge a grid point falls.
const EDGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ThickSetSpec {
    Full,
    /// `⋃ₖ [kP, kP + w)` along axis 0; stripes in 2D.
    PeriodicSlabs {
        period: f64,
        width: f64,
    },
    /// Product of slabs along every axis.
    PeriodicCubes {
        period: f64,
        width: f64,
    },
    /// Cells of side `cell`, anchored at `-L`, each kept with probability `p`.
    BernoulliCells {
        cell: f64,
        p: f64,
        seed: u64,
    },
    CustomMask(Vec<bool>),
}

impl ThickSetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OuError::InvalidArgument(m));
        match *self {
            ThickSetSpec::PeriodicSlabs { period, width } | ThickSetSpec::PeriodicCubes { period, width } => {
                if !(period > 0.0 && period.is_finite()) || !(width > 0.0 && width <= period) {
                    return bad(format!("need 0 < w <= P, got w = {width}, P = {period}"));
                }
            }
            ThickSetSpec::BernoulliCells { cell, p, .. } => {
                if !(cell > 0.0 && cell.is_finite()) {
                    return bad(format!("cell side {cell} must be > 0"));
                }
                // p = 0 is accepted and yields the empty set.
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("keep probability {p} must lie in [0, 1]"));
                }
            }
            ThickSetSpec::Full | ThickSetSpec::CustomMask(_) => {}
        }
        Ok(())
    }
}

/// Claimed `(λ, a)`-thickness of a mask. `resolution` is the grid spacing the
/// claim was made at.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub lambda: f64,
    pub a: Vec<f64>,
    pub resolution: f64,
}

/// Grid sampling of an observation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    grid: GridSpec,
    mask: Vec<bool>,
    certificate: Option<Certificate>,
}

impl ObservationMask {
    pub fn new(grid: GridSpec, mask: Vec<bool>, certificate: Option<Certificate>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(OuError::InvalidArgument(format!("mask has {} entries, grid has {}", mask.len(), grid.len())));
        }
        if let Some(c) = &certificate {
            if !(c.lambda > 0.0 && c.lambda <= 1.0) || c.a.len() != grid.dim() || c.a.iter().any(|&a| !(a > 0.0)) {
                return Err(OuError::InvalidArgument(format!("malformed certificate {c:?}")));
            }
        }
        Ok(Self { grid, mask, certificate })
    }

    pub fn full(grid: GridSpec) -> Self {
        build_mask(&ThickSetSpec::Full, grid).expect("full mask is always valid")
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        self.certificate.as_ref()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Fraction of grid points inside the set.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.mask.len() as f64
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    pub fn is_subset_of(&self, other: &ObservationMask) -> bool {
        self.grid == other.grid && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Zeroes the entries outside the set in place.
    pub fn apply(&self, values: &mut [Complex64]) {
        for (v, &m) in values.iter_mut().zip(&self.mask) {
            if !m {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
}

impl fmt::Display for ObservationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mask on {}^{} points, coverage {:.4}", self.grid.n(), self.grid.dim(), self.coverage())?;
        if let Some(c) = &self.certificate {
            write!(f, ", certified ({}, {:?}) at h = {}", c.lambda, c.a, c.resolution)?;
        }
        Ok(())
    }
}

fn in_slab(x: f64, period: f64, width: f64) -> bool {
    let q = x / period;
    let frac = q - (q + EDGE_TOL).floor();
    frac < width / period - EDGE_TOL
}

/// Samples `spec` at the grid points.
pub fn build_mask(spec: &ThickSetSpec, grid: GridSpec) -> Result<ObservationMask> {
    spec.validate()?;
    let dim = grid.dim();
    let h = grid.spacing();
    let cert = |lambda: f64, a: f64| Some(Certificate { lambda, a: vec![a; dim], resolution: h });
    let (mask, certificate) = match *spec {
        ThickSetSpec::Full => (vec![true; grid.len()], cert(1.0, grid.half_width())),
        ThickSetSpec::PeriodicSlabs { period, width } => {
            let mask = (0..grid.len()).map(|i| in_slab(grid.point(i)[0], period, width)).collect();
            (mask, cert(width / period, period))
        }
        ThickSetSpec::PeriodicCubes { period, width } => {
            let mask = (0..grid.len())
                .map(|i| {
                    let p = grid.point(i);
                    p[..dim].iter().all(|&x| in_slab(x, period, width))
                })
                .collect();
            (mask, cert((width / period).powi(dim as i32), period))
        }
        ThickSetSpec::BernoulliCells { cell, p, seed } => {
            let per_axis = (2.0 * grid.half_width() / cell).ceil() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kept: Vec<bool> = (0..per_axis.pow(dim as u32)).map(|_| rng.random::<f64>() < p).collect();
            let cell_of = |i: usize| ((i as f64 * h / cell + EDGE_TOL).floor() as usize).min(per_axis - 1);
            let mask = (0..grid.len())
                .map(|idx| {
                    let [i, j] = grid.unravel(idx);
                    let c = if dim == 1 { cell_of(i) } else { cell_of(i) * per_axis + cell_of(j) };
                    kept[c]
                })
                .collect();
            let certificate = if p == 1.0 { cert(1.0, cell) } else { None };
            (mask, certificate)
        }
        ThickSetSpec::CustomMask(ref m) => (m.clone(), None),
    };
    ObservationMask::new(grid, mask, certificate)
}

/// Outcome of a sampled thickness check.
#[derive(Debug, Clone, PartialEq)]
pub struct ThicknessReport {
    pub passed: bool,
    /// Smallest `|ω ∩ (x + 𝓡)| / |𝓡|` over the translates examined.
    pub worst_fraction: f64,
    /// Lower-left corner of the worst window.
    pub worst_origin: Vec<f64>,
    /// Resolution allowance `Σ 1/mⱼ`, one boundary layer of cells per axis.
    pub slack: f64,
    /// Window size in cells per axis.
    pub window_cells: Vec<usize>,
    pub translates_checked: usize,
}

fn window_starts(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|t| t * n / k).collect()
}

/// Periodic window sums `Σ_{i=s}^{s+m-1} v[i mod n]` for each start `s`.
fn window_sums(v: &[u32], m: usize, starts: &[usize]) -> Vec<u32> {
    let n = v.len();
    let mut prefix = Vec::with_capacity(2 * n + 1);
    prefix.push(0u32);
    for i in 0..2 * n {
        prefix.push(prefix[i] + v[i % n]);
    }
    starts.iter().map(|&s| prefix[s + m] - prefix[s]).collect()
}

/// Checks `|ω ∩ (x + 𝓡)| ≥ (λ - slack)|𝓡|` for `𝓡 = ∏[0, aⱼ)` at up to
/// `translates` grid-aligned periodic shifts `x`. Windows span `mⱼ = round(aⱼ/h)`
/// cells and measure is counted in cells. An empty intersection always fails.
pub fn check_thickness(mask: &ObservationMask, lambda: f64, a: &[f64], translates: usize) -> Result<ThicknessReport> {
    let grid = mask.grid();
    let (dim, n, h) = (grid.dim(), grid.n(), grid.spacing());
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(OuError::InvalidArgument(format!("λ = {lambda} must lie in (0, 1]")));
    }
    if a.len() != dim {
        return Err(OuError::InvalidArgument(format!("need {dim} window sides, got {}", a.len())));
    }
    if translates == 0 {
        return Err(OuError::InvalidArgument("need at least one translate".into()));
    }
    let two_l = 2.0 * grid.half_width();
    let mut cells = Vec::with_capacity(dim);
    for &aj in a {
        if !(aj > 0.0 && aj < two_l) {
            return Err(OuError::InvalidArgument(format!("window side {aj} must lie in (0, 2L = {two_l})")));
        }
        let m = (aj / h).round() as usize;
        if m < MIN_CELLS_PER_WINDOW {
            return Err(OuError::ResolutionTooCoarse(format!(
                "window side {aj} spans {:.2} cells at h = {h}, need at least {MIN_CELLS_PER_WINDOW}",
                aj / h
            )));
        }
        cells.push(m);
    }
    let per_axis = ((translates as f64).powf(1.0 / dim as f64).ceil() as usize).clamp(1, n);
    let starts = window_starts(n, per_axis);
    let bits: Vec<u32> = mask.mask().iter().map(|&b| b as u32).collect();

    // counts[s0][s1]; 1D uses a single column.
    let counts: Vec<Vec<u32>> = if dim == 1 {
        window_sums(&bits, cells[0], &starts).into_iter().map(|c| vec![c]).collect()
    } else {
        let rows: Vec<Vec<u32>> = bits.chunks(n).map(|row| window_sums(row, cells[1], &starts)).collect();
        let mut out = vec![vec![0u32; starts.len()]; starts.len()];
        for (jj, _) in starts.iter().enumerate() {
            let column: Vec<u32> = rows.iter().map(|r| r[jj]).collect();
            for (ii, c) in window_sums(&column, cells[0], &starts).into_iter().enumerate() {
                out[ii][jj] = c;
            }
        }
        out
    };

    let volume: f64 = cells.iter().map(|&m| m as f64).product();
    let mut worst = f64::INFINITY;
    let mut worst_at = (0, 0);
    for (ii, row) in counts.iter().enumerate() {
        for (jj, &c) in row.iter().enumerate() {
            let frac = c as f64 / volume;
            if frac < worst {
                worst = frac;
                worst_at = (ii, jj);
            }
        }
    }
    let slack: f64 = cells.iter().map(|&m| 1.0 / m as f64).sum();
    let mut worst_origin = vec![grid.coord(starts[worst_at.0])];
    if dim == 2 {
        worst_origin.push(grid.coord(starts[worst_at.1]));
    }
    Ok(ThicknessReport {
        passed: worst > 0.0 && worst >= lambda - slack,
        worst_fraction: worst,
        worst_origin,
        slack,
        window_cells: cells,
        translates_checked: counts.len() * counts[0].len(),
    })
}

/// Checks a mask against its own certificate; `None` when it carries none.
pub fn verify_certificate(mask: &ObservationMask, translates: usize) -> Option<Result<ThicknessReport>> {
    let c = mask.certificate()?.clone();
    Some(check_thickness(mask, c.lambda, &c.a, translates))
}

/// `f·1_ω`.
pub fn restrict(f: &Field, mask: &ObservationMask) -> Result<Field> {
    if f.grid() != mask.grid() {
        return Err(OuError::GridMismatch);
    }
    let mut g = f.clone();
    mask.apply(g.values_mut());
    Ok(g)
}
