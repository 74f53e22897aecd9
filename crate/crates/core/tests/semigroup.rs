mod common;

use common::{fitted_grid, hurwitz_1d_strategy, hurwitz_2d_strategy};
use ou_inverse::field::norm_l2;
use ou_inverse::semigroup::{
    apply_generator, propagate_fourier, propagate_kolmogorov, time_series, FourierPropagator, Interp, PropagatorConfig,
};
use ou_inverse::{Field, GridSpec, OuModel};
use proptest::prelude::*;

fn bump(grid: GridSpec, centre: [f64; 2], width: f64) -> Field {
    Field::from_real_fn(grid, |x| {
        let r2: f64 = x.iter().zip(centre).map(|(a, c)| (a - c).powi(2)).sum();
        (-0.5 * r2 / (width * width)).exp()
    })
}

fn rel(a: &Field, b: &Field) -> f64 {
    norm_l2(&a.sub(b).unwrap()) / norm_l2(b)
}

fn semigroup_defect(model: &OuModel, n: usize, centre: [f64; 2], width: f64, t1: f64, t2: f64) -> f64 {
    let cfg = PropagatorConfig::default();
    let grid = fitted_grid(model, t1 + t2, width, centre, n);
    let u0 = bump(grid, centre, width);
    let p = |t: f64| FourierPropagator::new(model, &grid, t, &cfg).unwrap();
    let split = p(t1).apply(&p(t2).apply(&u0).unwrap()).unwrap();
    rel(&split, &p(t1 + t2).apply(&u0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn semigroup_law_1d(
        model in hurwitz_1d_strategy(1.0),
        c in -1.0..1.0f64,
        w in 0.4..1.0f64,
        t1 in 0.05..0.6f64,
        t2 in 0.05..0.6f64,
    ) {
        let d = semigroup_defect(&model, 512, [c, 0.0], w, t1, t2);
        prop_assert!(d <= 1e-7, "defect {}", d);
    }

    #[test]
    fn identity_at_time_zero(model in hurwitz_1d_strategy(1.0), w in 0.3..1.0f64) {
        let grid = GridSpec::auto(&model, 1.0, 256).unwrap();
        let u0 = bump(grid, [0.0, 0.0], w);
        for interp in [Interp::Nearest, Interp::Linear, Interp::CubicSpline] {
            let cfg = PropagatorConfig { interp, ..Default::default() };
            let p = FourierPropagator::new(&model, &grid, 0.0, &cfg).unwrap();
            prop_assert!(rel(&p.apply(&u0).unwrap(), &u0) <= 1e-12);
        }
    }

    #[test]
    fn decay_law(model in hurwitz_2d_strategy(0.8), t in 0.0..0.8f64) {
        let grid = fitted_grid(&model, t, 0.8, [0.3, -0.2], 64);
        let u0 = bump(grid, [0.3, -0.2], 0.8);
        let u = propagate_fourier(&model, &u0, t, &PropagatorConfig::default()).unwrap();
        let bound = (-0.5 * model.trace_b() * t).exp() * norm_l2(&u0);
        prop_assert!(norm_l2(&u) <= bound * (1.0 + 1e-8));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn semigroup_law_2d(model in hurwitz_2d_strategy(1.0), t1 in 0.05..0.3f64, t2 in 0.05..0.3f64) {
        let d = semigroup_defect(&model, 64, [0.2, -0.3], 0.8, t1, t2);
        prop_assert!(d <= 1e-7, "defect {}", d);
    }
}

fn split_defect(model: &OuModel, grid: GridSpec, t1: f64, t2: f64) -> f64 {
    let cfg = PropagatorConfig::default();
    let u0 = bump(grid, [0.3, 0.0], 0.7);
    let p = |t: f64| FourierPropagator::new(model, &grid, t, &cfg).unwrap();
    let split = p(t1).apply(&p(t2).apply(&u0).unwrap()).unwrap();
    rel(&split, &p(t1 + t2).apply(&u0).unwrap())
}

// Fractional solutions have algebraic tails, so the periodic box truncates them
// and the split defect is governed by the box size rather than the resolution.
#[test]
fn fractional_semigroup_defect_shrinks_with_the_box() {
    for s in [0.3, 0.6, 1.2, 1.8] {
        let model = OuModel::scalar(1.0, -0.7, s).unwrap();
        let small = split_defect(&model, GridSpec::new(1, 10.0, 512).unwrap(), 0.3, 0.4);
        let large = split_defect(&model, GridSpec::new(1, 40.0, 2048).unwrap(), 0.3, 0.4);
        assert!(large < 0.5 * small, "s = {s}: {small} -> {large}");
    }
}

#[test]
fn time_series_matches_one_shot() {
    let model = OuModel::planar([1.0, 0.2, 0.2, 0.5], [-1.0, 2.0, -1.0, -0.5], 1.0).unwrap();
    let grid = fitted_grid(&model, 1.0, 0.7, [0.0, 0.5], 64);
    let u0 = bump(grid, [0.0, 0.5], 0.7);
    let cfg = PropagatorConfig::default();
    let series = time_series(&model, &u0, &[0.0, 0.25, 1.0], &cfg).unwrap();
    assert_eq!(series[0], u0);
    assert_eq!(series[2], propagate_fourier(&model, &u0, 1.0, &cfg).unwrap());
    assert!(time_series(&model, &u0, &[0.5, 0.25], &cfg).is_err());
}

#[test]
fn kolmogorov_agrees_with_fourier_in_2d() {
    let model = OuModel::planar([1.0, 0.0, 0.0, 1.0], [-1.0, 1.0, 0.0, -1.0], 1.0).unwrap();
    let grid = fitted_grid(&model, 0.5, 0.8, [0.5, 0.0], 128);
    let u0 = bump(grid, [0.5, 0.0], 0.8);
    let cfg = PropagatorConfig::default();
    let a = propagate_fourier(&model, &u0, 0.5, &cfg).unwrap();
    let b = propagate_kolmogorov(&model, &u0, 0.5, &cfg).unwrap();
    assert!(rel(&b, &a) <= 1e-6, "{}", rel(&b, &a));
}

/// Slope of `log₂` error between steps `δ` and `δ/2` of the centred difference
/// `(T(t+δ)u₀ - T(t-δ)u₀)/2δ` against `𝒜 T(t)u₀`.
fn richardson_slope(model: &OuModel, u0: &Field, t: f64, delta: f64) -> f64 {
    let cfg = PropagatorConfig::default();
    let at = |s: f64| propagate_fourier(model, u0, s, &cfg).unwrap();
    let exact = apply_generator(model, &at(t)).unwrap();
    let err = |d: f64| {
        let fd = at(t + d).sub(&at(t - d)).unwrap().scaled(0.5 / d);
        norm_l2(&fd.sub(&exact).unwrap())
    };
    (err(delta) / err(0.5 * delta)).log2()
}

#[test]
fn generator_is_the_time_derivative() {
    let scalar = OuModel::scalar(1.0, -1.0, 1.0).unwrap();
    let g1 = fitted_grid(&scalar, 0.4, 0.6, [0.5, 0.0], 512);
    let slope = richardson_slope(&scalar, &bump(g1, [0.5, 0.0], 0.6), 0.3, 0.04);
    assert!((1.8..=2.2).contains(&slope), "{slope}");

    let planar = OuModel::planar([1.0, 0.3, 0.3, 0.6], [-1.0, 1.0, -0.5, -0.8], 1.0).unwrap();
    let g2 = fitted_grid(&planar, 0.4, 0.7, [0.2, 0.1], 128);
    let slope = richardson_slope(&planar, &bump(g2, [0.2, 0.1], 0.7), 0.3, 0.04);
    assert!((1.8..=2.2).contains(&slope), "{slope}");
}
