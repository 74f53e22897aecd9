#![allow(dead_code)]

use ou_inverse::field::auto_half_width;
use ou_inverse::matops::{eigenvalues, expm, gramian_qt, OuModel};
use ou_inverse::{GridSpec, Matrix};
use proptest::prelude::*;

/// Hurwitz model built from raw entries: `Q = LLᵀ + 0.2I` and `B` shifted left
/// until its spectral abscissa is `-margin`.
pub fn hurwitz_2d(l: [f64; 3], b: [f64; 4], margin: f64, s: f64) -> OuModel {
    let q = [l[0] * l[0] + 0.2, l[0] * l[1], l[0] * l[1], l[1] * l[1] + l[2] * l[2] + 0.2];
    let raw = Matrix::from_row_slice(2, 2, &b);
    let abscissa = eigenvalues(&raw).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let shift = abscissa + margin;
    OuModel::planar(q, [b[0] - shift, b[1], b[2], b[3] - shift], s).unwrap()
}

pub fn hurwitz_2d_strategy(s: f64) -> impl Strategy<Value = OuModel> {
    (prop::array::uniform3(-1.0..1.0f64), prop::array::uniform4(-1.0..1.0f64), 0.3..1.0f64)
        .prop_map(move |(l, b, m)| hurwitz_2d(l, b, m, s))
}

pub fn hurwitz_1d_strategy(s: f64) -> impl Strategy<Value = OuModel> {
    (0.3..2.0f64, -2.0..-0.3f64).prop_map(move |(q, b)| OuModel::scalar(q, b, s).unwrap())
}

/// Grid on which a Gaussian bump of width `width` centred at `centre` stays
/// resolved and decays below the boundary tolerance up to time `horizon`
/// (`s = 1` covariance `e^{-tB}(w²I + 2Q_t)e^{-tBᵀ}`), and at least as wide as
/// the automatic box. Points per axis grow from `n_min` until `h ≤ 0.4·width`.
pub fn fitted_grid(model: &OuModel, horizon: f64, width: f64, centre: [f64; 2], n_min: usize) -> GridSpec {
    let dim = model.dim();
    let mut half = auto_half_width(model, horizon);
    for k in 0..=16 {
        let t = horizon * k as f64 / 16.0;
        let back = expm(model.b(), -t);
        let cov = &back
            * (Matrix::identity(dim, dim) * (width * width) + gramian_qt(model, t).unwrap() * 2.0)
            * back.transpose();
        let sigma = cov.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max).sqrt();
        let c = &back * Matrix::from_column_slice(dim, 1, &centre[..dim]);
        half = half.max(c.norm() + 7.0 * sigma);
    }
    let half = (10.0 * half).ceil() / 10.0;
    let mut n = n_min;
    while 2.0 * half / n as f64 > 0.4 * width && n < 4096 {
        n *= 2;
    }
    GridSpec::new(dim, half, n).unwrap()
}
