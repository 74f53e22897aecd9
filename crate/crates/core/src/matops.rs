//! Small dense matrix kernels: exponentials, Gramians, the spectral condition,
//! the analyticity angle of the weighted semigroup and the convexity exponents
//! derived from it.
//!
//! Everything here is written for general `N`; models are restricted to
//! `N ∈ {1, 2}` at construction, where eigenvalues have closed forms.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{OuError, Result};
use crate::quad;

pub type Matrix = DMatrix<f64>;

/// Below this value `cot ψ` is treated as zero (ψ = π/2).
pub const COT_PSI_CLAMP: f64 = 1e-13;

/// Absolute tolerance of the Gramian quadrature.
pub const GRAMIAN_TOL: f64 = 1e-12;

/// Problem data of the (fractional) Ornstein–Uhlenbeck equation
/// `∂ₜu = -tr^s(-Q∇²u) + Bx·∇u`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuModel {
    q: Matrix,
    b: Matrix,
    s: f64,
    q_sqrt: Matrix,
}

impl OuModel {
    pub fn new(q: Matrix, b: Matrix, s: f64) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || b.nrows() != n || b.ncols() != n {
            return Err(OuError::InvalidModel(format!(
                "Q is {}x{} and B is {}x{}; both must be square of the same size",
                q.nrows(),
                q.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !(1..=2).contains(&n) {
            return Err(OuError::InvalidModel(format!("dimension {n} not in {{1, 2}}")));
        }
        if q.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(OuError::InvalidModel("non-finite matrix entry".into()));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(OuError::InvalidModel("Q is not symmetric".into()));
        }
        let q = (&q + q.transpose()) * 0.5;
        let eig = SymmetricEigen::new(q.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(OuError::InvalidModel("Q is not positive definite".into()));
        }
        if b.iter().all(|&v| v == 0.0) {
            return Err(OuError::InvalidModel("drift B must be nonzero".into()));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(OuError::InvalidModel(format!("fractional order s = {s} must be > 0")));
        }
        let q_sqrt = sym_power(&q, 0.5);
        Ok(Self { q, b, s, q_sqrt })
    }

    /// One-dimensional model with scalar diffusion `q` and drift `b`.
    pub fn scalar(q: f64, b: f64, s: f64) -> Result<Self> {
        Self::new(Matrix::from_element(1, 1, q), Matrix::from_element(1, 1, b), s)
    }

    /// Two-dimensional model from row-major entries.
    pub fn planar(q: [f64; 4], b: [f64; 4], s: f64) -> Result<Self> {
        Self::new(Matrix::from_row_slice(2, 2, &q), Matrix::from_row_slice(2, 2, &b), s)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Symmetric square root of Q.
    pub fn q_sqrt(&self) -> &Matrix {
        &self.q_sqrt
    }

    pub fn trace_b(&self) -> f64 {
        self.b.trace()
    }

    pub fn is_hurwitz(&self) -> bool {
        is_hurwitz(&self.b)
    }

    /// Same model with a different fractional order.
    pub fn with_order(&self, s: f64) -> Result<Self> {
        Self::new(self.q.clone(), self.b.clone(), s)
    }

    pub(crate) fn require_hurwitz(&self) -> Result<()> {
        if self.is_hurwitz() {
            Ok(())
        } else {
            let max_real_part = eigenvalues(&self.b).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            Err(OuError::HurwitzViolation { max_real_part })
        }
    }
}

/// Analyticity angle of the weighted semigroup and the exponents it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleReport {
    pub q_inf: Matrix,
    /// `2‖½I + Q^{-1/2} Q∞ Bᵀ Q^{-1/2}‖₂`.
    pub cot_psi: f64,
    pub psi: f64,
    pub r: f64,
    pub phi: f64,
    pub c_psi: f64,
}

/// `e^{tB}` by scaling and squaring with the degree-13 Padé approximant.
pub fn expm(b: &Matrix, t: f64) -> Matrix {
    const PADE: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    let n = b.nrows();
    let id = Matrix::identity(n, n);
    let a = b * t;
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if norm1 == 0.0 {
        return id;
    }
    let squarings = if norm1 > THETA_13 { (norm1 / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(squarings);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * PADE[13] + &a4 * PADE[11] + &a2 * PADE[9];
    let u = &a * (&a6 * inner_u + &a6 * PADE[7] + &a4 * PADE[5] + &a2 * PADE[3] + &id * PADE[1]);
    let inner_v = &a6 * PADE[12] + &a4 * PADE[10] + &a2 * PADE[8];
    let v = &a6 * inner_v + &a6 * PADE[6] + &a4 * PADE[4] + &a2 * PADE[2] + &id * PADE[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Eigenvalues, in closed form for N ≤ 2.
pub fn eigenvalues(b: &Matrix) -> Vec<Complex64> {
    match b.nrows() {
        0 => Vec::new(),
        1 => vec![Complex64::new(b[(0, 0)], 0.0)],
        2 => {
            let half_tr = 0.5 * (b[(0, 0)] + b[(1, 1)]);
            let det = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
            let disc = half_tr * half_tr - det;
            if disc >= 0.0 {
                let r = disc.sqrt();
                vec![Complex64::new(half_tr + r, 0.0), Complex64::new(half_tr - r, 0.0)]
            } else {
                let r = (-disc).sqrt();
                vec![Complex64::new(half_tr, r), Complex64::new(half_tr, -r)]
            }
        }
        _ => b.clone().complex_eigenvalues().iter().map(|z| Complex64::new(z.re, z.im)).collect(),
    }
}

/// Spectral condition: every eigenvalue has strictly negative real part.
pub fn is_hurwitz(b: &Matrix) -> bool {
    eigenvalues(b).iter().all(|z| z.re < 0.0)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() <= 2 && m.ncols() <= 2 {
        let g = m.transpose() * m;
        let lmax = SymmetricEigen::new(g).eigenvalues.iter().cloned().fold(0.0, f64::max);
        lmax.max(0.0).sqrt()
    } else {
        m.clone().svd(false, false).singular_values.max()
    }
}

/// `A^p` for a symmetric positive definite `A`.
pub fn sym_power(a: &Matrix, p: f64) -> Matrix {
    let eig = SymmetricEigen::new(a.clone());
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(p)));
    let v = &eig.eigenvectors;
    let out = v * d * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Controllability Gramian `Q_t = ∫₀ᵗ e^{τB} Q e^{τBᵀ} dτ` by adaptive Simpson quadrature.
pub fn gramian_qt(model: &OuModel, t: f64) -> Result<Matrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(OuError::InvalidArgument(format!("Gramian horizon t = {t} must be >= 0")));
    }
    let n = model.dim();
    if t == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let b = model.b();
    let q = model.q();
    let integrand = |tau: f64| {
        let e = expm(b, tau);
        &e * q * e.transpose()
    };
    let g = quad::adaptive_simpson_matrix(integrand, 0.0, t, GRAMIAN_TOL)?;
    Ok((&g + g.transpose()) * 0.5)
}

/// Solves `B X + X Bᵀ = -Q` on the symmetric unknowns.
pub fn solve_lyapunov(b: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = b.nrows();
    let m = n * (n + 1) / 2;
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    };
    let mut a = Matrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            for k in 0..n {
                a[(row, idx(k, j))] += b[(i, k)];
                a[(row, idx(i, k))] += b[(j, k)];
            }
            rhs[row] = -q[(i, j)];
        }
    }
    let sol = a.lu().solve(&rhs).ok_or_else(|| OuError::InvalidModel("Lyapunov operator is singular".into()))?;
    Ok(Matrix::from_fn(n, n, |i, j| sol[idx(i, j)]))
}

/// `Q∞`, the covariance parameter of the invariant measure.
pub fn gramian_qinf(model: &OuModel) -> Result<Matrix> {
    model.require_hurwitz()?;
    let x = solve_lyapunov(model.b(), model.q())?;
    Ok((&x + x.transpose()) * 0.5)
}

/// Residual `‖B X + X Bᵀ + Q‖_max`.
pub fn lyapunov_residual(b: &Matrix, q: &Matrix, x: &Matrix) -> f64 {
    (b * x + x * b.transpose() + q).amax()
}

/// Optimal analyticity angle of the semigroup on `L²_μ` and the derived
/// convexity exponents `r`, `φ` and `c_ψ = (1/r)^φ`.
pub fn analyticity_angle(model: &OuModel) -> Result<AngleReport> {
    let q_inf = gramian_qinf(model)?;
    let n = model.dim();
    let q_inv_sqrt = sym_power(model.q(), -0.5);
    let m = Matrix::identity(n, n) * 0.5 + &q_inv_sqrt * &q_inf * model.b().transpose() * &q_inv_sqrt;
    let mut cot_psi = 2.0 * spectral_norm(&m);
    if cot_psi < COT_PSI_CLAMP {
        cot_psi = 0.0;
    }
    let (psi, r, phi) = if cot_psi == 0.0 {
        (FRAC_PI_2, 1.0, 1.0)
    } else {
        let psi = (1.0 / cot_psi).atan();
        (psi, 2.0 * (0.5 * psi).cos(), std::f64::consts::PI / psi)
    };
    let c_psi = (1.0 / r).powf(phi);
    Ok(AngleReport { q_inf, cot_psi, psi, r, phi, c_psi })
}
