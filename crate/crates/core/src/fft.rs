//! FFT plumbing shared by the spectral code: per-thread plan cache, axis-wise
//! line iteration on `n^dim` arrays, and the centered DFT pair.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Calls `f` on every line of the row-major `n^dim` array along `axis`.
pub(crate) fn for_each_line<F>(data: &mut [Complex64], n: usize, dim: usize, axis: usize, mut f: F)
where
    F: FnMut(&mut [Complex64]),
{
    debug_assert_eq!(data.len(), n.pow(dim as u32));
    match (dim, axis) {
        (1, _) => f(data),
        (2, 1) => data.chunks_mut(n).for_each(f),
        (2, 0) => {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for col in 0..n {
                for (r, b) in buf.iter_mut().enumerate() {
                    *b = data[r * n + col];
                }
                f(&mut buf);
                for (r, b) in buf.iter().enumerate() {
                    data[r * n + col] = *b;
                }
            }
        }
        _ => unreachable!("dimension {dim} unsupported"),
    }
}

/// Unnormalized multi-dimensional FFT in standard (0..n) index order.
pub(crate) fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        for_each_line(data, n, dim, axis, |line| fft.process_with_scratch(line, &mut scratch));
    }
}

fn swap_halves_and_sign(data: &mut [Complex64], n: usize, dim: usize) {
    let half = n / 2;
    for axis in 0..dim {
        for_each_line(data, n, dim, axis, |line| {
            let (a, b) = line.split_at_mut(half);
            a.swap_with_slice(b);
        });
    }
    // (-1)^k with k = m - n/2 equals (-1)^m because n/2 is even for n >= 4.
    match dim {
        1 => data.iter_mut().skip(1).step_by(2).for_each(|v| *v = -*v),
        2 => {
            for (r, row) in data.chunks_mut(n).enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    if (r + c) % 2 == 1 {
                        *v = -*v;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
}

/// `D`: spatial samples (index j ↔ x = -L + jh) to centered frequencies
/// (index m ↔ k = m - n/2), `(Df)_m = Σ_j f_j e^{-i x_j ξ_k}`.
pub(crate) fn dft_centered(data: &mut [Complex64], n: usize, dim: usize) {
    fft_nd(data, n, dim, false);
    swap_halves_and_sign(data, n, dim);
}

/// `Dᴴ`, the exact conjugate transpose of [`dft_centered`].
pub(crate) fn dft_centered_adjoint(data: &mut [Complex64], n: usize, dim: usize) {
    swap_halves_and_sign(data, n, dim);
    fft_nd(data, n, dim, true);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_dft_matches_direct_sum() {
        let n = 16;
        let l = 3.0;
        let h = 2.0 * l / n as f64;
        let f: Vec<Complex64> =
            (0..n).map(|j| Complex64::new((j as f64 * 0.37).sin(), (j as f64 * 0.11).cos())).collect();
        let mut d = f.clone();
        dft_centered(&mut d, n, 1);
        for m in 0..n {
            let xi = std::f64::consts::PI * (m as f64 - (n / 2) as f64) / l;
            let want: Complex64 = (0..n)
                .map(|j| {
                    let x = -l + j as f64 * h;
                    f[j] * Complex64::from_polar(1.0, -x * xi)
                })
                .sum();
            assert!((d[m] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_pairing() {
        let n = 16;
        let a: Vec<Complex64> = (0..n * n).map(|i| Complex64::new((i as f64).sin(), (0.3 * i as f64).cos())).collect();
        let b: Vec<Complex64> =
            (0..n * n).map(|i| Complex64::new((1.7 * i as f64).cos(), (0.9 * i as f64).sin())).collect();
        let mut da = a.clone();
        dft_centered(&mut da, n, 2);
        let mut dhb = b.clone();
        dft_centered_adjoint(&mut dhb, n, 2);
        let lhs: Complex64 = da.iter().zip(&b).map(|(x, y)| x * y.conj()).sum();
        let rhs: Complex64 = a.iter().zip(&dhb).map(|(x, y)| x * y.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
    }
}
