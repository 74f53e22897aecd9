//! Ornstein–Uhlenbeck and fractional Ornstein–Uhlenbeck semigroups on truncated
//! periodic grids, logarithmic-convexity diagnostics, thick observation sets,
//! and Tikhonov reconstruction of initial data from partial observations.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod convexity;
pub mod error;
mod fft;
pub mod field;
pub mod inverse;
pub mod matops;
pub mod quad;
pub mod semigroup;
pub mod thickset;

pub use error::{OuError, Result, Warning};
pub use field::{AdmissibleNorm, Field, GridSpec, SpectralField};
pub use matops::{AngleReport, Matrix, OuModel};
