//! Subcommand bodies. Each one reads what it needs from the config, writes its
//! artifacts through a [`Sink`] and returns a short summary for stdout.

use std::fs::File;
use std::io::BufReader;

use ou_inverse::convexity::bounds::stability_bound_analytic;
use ou_inverse::convexity::{
    check_logconvexity_analytic, convexity_constant, BoundParameters, ConvexityConfig, LogConvexityProbe,
};
use ou_inverse::field::io::{read_field, write_field, write_field_csv};
use ou_inverse::field::{norm_l2, sample_admissible};
use ou_inverse::inverse::{add_noise, stability_sweep, AlphaRule, CgSettings, ObservationOperator};
use ou_inverse::matops::analyticity_angle;
use ou_inverse::semigroup::{propagate_fourier, propagate_kolmogorov, PropagatorConfig};
use ou_inverse::thickset::io::{read_mask, write_mask};
use ou_inverse::thickset::{build_mask, check_thickness, ObservationMask, ThickSetSpec};
use ou_inverse::{AdmissibleNorm, Field, GridSpec, Matrix, OuModel};
use serde_json::{json, Value};

use crate::config::{require, AlphaChoice, ConfigError, ExperimentConfig, GridWidth, Method, SetKind};
use crate::emit::{fmt17, num, nums, opt, Sink};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn bad(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::BadValue { key: key.into(), msg: msg.into() })
}

pub fn model(c: &ExperimentConfig) -> Result<OuModel> {
    let n = require(&c.model_n, "model.N")?;
    if !(1..=2).contains(&n) {
        return Err(bad("model.N", format!("dimension {n} must be 1 or 2")));
    }
    let q = require(&c.model_q, "model.Q")?;
    let b = require(&c.model_b, "model.B")?;
    for (key, v) in [("model.Q", &q), ("model.B", &b)] {
        if v.len() != n * n {
            return Err(bad(key, format!("need {} entries, got {}", n * n, v.len())));
        }
    }
    let s = c.model_s.unwrap_or(1.0);
    Ok(OuModel::new(Matrix::from_row_slice(n, n, &q), Matrix::from_row_slice(n, n, &b), s)?)
}

fn horizon(c: &ExperimentConfig) -> f64 {
    c.run_t.unwrap_or(1.0)
}

fn grid(c: &ExperimentConfig, model: &OuModel) -> Result<GridSpec> {
    let n = require(&c.grid_n, "grid.n")?;
    Ok(match c.grid_l.unwrap_or(GridWidth::Auto) {
        GridWidth::Auto => GridSpec::auto(model, horizon(c), n)?,
        GridWidth::Fixed(l) => GridSpec::new(model.dim(), l, n)?,
    })
}

fn mask(c: &ExperimentConfig, grid: GridSpec) -> Result<ObservationMask> {
    let spec = match c.set_kind.clone().unwrap_or(SetKind::Full) {
        SetKind::Full => ThickSetSpec::Full,
        SetKind::Slabs => ThickSetSpec::PeriodicSlabs {
            period: require(&c.set_period, "set.period")?,
            width: require(&c.set_width, "set.width")?,
        },
        SetKind::Cubes => ThickSetSpec::PeriodicCubes {
            period: require(&c.set_period, "set.period")?,
            width: require(&c.set_width, "set.width")?,
        },
        SetKind::Bernoulli => ThickSetSpec::BernoulliCells {
            cell: require(&c.set_cell, "set.cell")?,
            p: require(&c.set_p, "set.p")?,
            seed: c.set_seed.unwrap_or(0),
        },
        SetKind::Custom => {
            let path = require(&c.set_mask, "set.mask")?;
            let m = read_mask(&mut BufReader::new(open(&path)?)).map_err(|e| CliError::io(&path, e))?;
            if m.grid() != &grid {
                return Err(bad("set.mask", format!("{path} lives on a different grid")));
            }
            return Ok(m);
        }
    };
    Ok(build_mask(&spec, grid)?)
}

fn open(path: &str) -> Result<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn propagator(c: &ExperimentConfig) -> Result<PropagatorConfig> {
    let mut p = PropagatorConfig::default();
    if let Some(v) = c.run_quad_tol {
        p.quad_tol = v;
    }
    if let Some(v) = &c.run_interp {
        p.interp = v.parse()?;
    }
    if let Some(v) = c.run_oversample {
        p.oversample = v;
    }
    if let Some(v) = c.run_kernel_quad_points {
        p.kernel_quad_points = v;
    }
    p.validate()?;
    Ok(p)
}

/// Default CG tolerance of the CLI. The library default of 1e-10 sits at the
/// rounding floor of typical runs, where CG stops on a rising objective and
/// would be reported as non-convergence.
const CLI_CG_TOL: f64 = 1e-8;

fn cg(c: &ExperimentConfig) -> CgSettings {
    let d = CgSettings::default();
    CgSettings { max_iter: c.run_cg_max_iter.unwrap_or(d.max_iter), tol: c.run_cg_tol.unwrap_or(CLI_CG_TOL) }
}

fn alpha_rule(c: &ExperimentConfig) -> AlphaRule {
    match c.run_alpha.unwrap_or(AlphaChoice::Discrepancy) {
        AlphaChoice::Discrepancy => AlphaRule::default(),
        AlphaChoice::Fixed(a) => AlphaRule::Fixed(a),
    }
}

fn datum(c: &ExperimentConfig, model: &OuModel, grid: &GridSpec, seed: u64) -> Result<Field> {
    if let Some(path) = &c.run_datum {
        let f = read_field(&mut BufReader::new(open(path)?)).map_err(|e| CliError::io(path, e))?;
        if f.grid() != grid {
            return Err(bad("run.datum", format!("{path} lives on a different grid")));
        }
        return Ok(f);
    }
    let norm = match c.run_norm.as_deref() {
        Some("weighted") => AdmissibleNorm::Weighted,
        _ => AdmissibleNorm::Lebesgue,
    };
    Ok(sample_admissible(model, grid, c.run_eps.unwrap_or(0.5), c.run_m.unwrap_or(1.0), seed, norm)?)
}

fn times(c: &ExperimentConfig) -> Result<Vec<f64>> {
    let t = require(&c.run_times, "run.times")?;
    if t.is_empty() {
        return Err(bad("run.times", "need at least one time"));
    }
    Ok(t)
}

fn matrix_json(m: &Matrix) -> Value {
    Value::Array((0..m.nrows()).map(|i| nums(&m.row(i).iter().cloned().collect::<Vec<_>>())).collect())
}

fn grid_json(g: &GridSpec) -> Value {
    json!({ "dim": g.dim(), "L": num(g.half_width()), "n": g.n() })
}

fn save_field(sink: &mut Sink, c: &ExperimentConfig, stem: &str, f: &Field) -> Result<()> {
    let name = format!("{stem}.oufld");
    sink.with(&name, |w| write_field(w, f)).map_err(|e| CliError::io(&name, e))?;
    if c.wants("field-csv") {
        let name = format!("{stem}.csv");
        sink.with(&name, |w| write_field_csv(w, f)).map_err(|e| CliError::io(&name, e))?;
    }
    Ok(())
}

fn save_json(sink: &mut Sink, name: &str, v: &Value) -> Result<()> {
    sink.json(name, v).map_err(|e| CliError::io(name, e))
}

fn save_csv(sink: &mut Sink, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    sink.csv(name, header, rows).map_err(|e| CliError::io(name, e))
}

pub fn angle(c: &ExperimentConfig, sink: &mut Sink) -> Result<String> {
    let m = model(c)?;
    let a = analyticity_angle(&m)?;
    let v = json!({
        "q_inf": matrix_json(&a.q_inf),
        "cot_psi": num(a.cot_psi),
        "psi": num(a.psi),
        "r": num(a.r),
        "phi": num(a.phi),
        "c_psi": num(a.c_psi),
    });
    save_json(sink, "angle.json", &v)?;
    Ok(serde_json::to_string_pretty(&v).expect("serializable"))
}

pub fn propagate(c: &ExperimentConfig, sink: &mut Sink) -> Result<String> {
    let m = model(c)?;
    let g = grid(c, &m)?;
    let cfg = propagator(c)?;
    let ts = times(c)?;
    let u0 = datum(c, &m, &g, c.run_seed.unwrap_or(0))?;
    save_field(sink, c, "u0", &u0)?;
    let mut rows = vec![vec![fmt17(0.0), fmt17(norm_l2(&u0))]];
    for (k, &t) in ts.iter().enumerate() {
        let u = match c.run_method.unwrap_or(Method::Fourier) {
            Method::Fourier => propagate_fourier(&m, &u0, t, &cfg)?,
            Method::Kolmogorov => propagate_kolmogorov(&m, &u0, t, &cfg)?,
        };
        save_field(sink, c, &format!("u_{k:03}"), &u)?;
        rows.push(vec![fmt17(t), fmt17(norm_l2(&u))]);
    }
    save_csv(sink, "norms.csv", &["t", "norm_l2"], &rows)?;
    Ok(rows.iter().map(|r| format!("t = {}  ||u|| = {}", r[0], r[1])).collect::<Vec<_>>().join("\n"))
}

pub fn convexity_check(c: &ExperimentConfig, sink: &mut Sink) -> Result<String> {
    let m = model(c)?;
    let g = grid(c, &m)?;
    let horizon = horizon(c);
    let ts = times(c)?;
    let mut cfg = ConvexityConfig::default();
    if c.run_quad_tol.is_some()
        || c.run_interp.is_some()
        || c.run_oversample.is_some()
        || c.run_kernel_quad_points.is_some()
    {
        cfg.propagator = propagator(c)?;
    }
    cfg.time_samples = c.run_time_samples.unwrap_or(cfg.time_samples);
    cfg.sphere_samples = c.run_sphere_samples.unwrap_or(cfg.sphere_samples);
    cfg.slack = c.run_slack.unwrap_or(cfg.slack);
    let mut report = convexity_constant(&m, horizon, cfg.time_samples, cfg.sphere_samples)?;
    let probe = LogConvexityProbe::with_constant(&m, &g, horizon, &ts, report.c, &cfg)?;
    let trials = c.run_trials.unwrap_or(10);
    let base = c.run_seed.unwrap_or(0);
    let analytic = m.s() == 1.0 && m.is_hurwitz();
    let mut rows = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut k_needed = f64::NEG_INFINITY;
    let mut passed = true;
    for trial in 0..trials {
        let u0 = datum(c, &m, &g, base + trial as u64)?;
        let v = probe.check(&u0)?;
        passed &= v.passed;
        worst = worst.max(v.worst_ratio);
        for r in &v.rows {
            rows.push(vec![trial.to_string(), fmt17(r.t), fmt17(r.lhs), fmt17(r.rhs), fmt17(r.ratio)]);
        }
        if analytic {
            let a = check_logconvexity_analytic(&m, &u0, horizon, &ts, &cfg, f64::INFINITY)?;
            k_needed = k_needed.max(a.k_needed);
        }
    }
    if trials > 0 {
        report.worst_ratio_fractional = Some(worst);
        if analytic {
            report.k_needed_analytic = Some(k_needed);
        }
    }
    save_csv(sink, "convexity.csv", &["trial", "t", "lhs", "rhs", "ratio"], &rows)?;
    let v = json!({
        "c1": num(report.c1),
        "c2": num(report.c2),
        "c": num(report.c),
        "time_samples": report.grid_resolution.0,
        "sphere_samples": report.grid_resolution.1,
        "argmin": nums(&[report.argmin.0, report.argmin.1]),
        "argmax": nums(&[report.argmax.0, report.argmax.1]),
        "worst_ratio_fractional": opt(report.worst_ratio_fractional),
        "k_needed_analytic": opt(report.k_needed_analytic),
        "trials": trials,
        "slack": num(cfg.slack),
        "passed": passed,
    });
    save_json(sink, "convexity.json", &v)?;
    Ok(format!("c = {}  worst ratio = {}  passed = {passed}", fmt17(report.c), fmt17(worst)))
}

/// `lambda` and `a` fall back to the certificate the set construction claims.
pub fn thickness_check(
    c: &ExperimentConfig,
    sink: &mut Sink,
    lambda: Option<f64>,
    a: &[f64],
    translates: usize,
) -> Result<String> {
    let g = match c.grid_l {
        Some(GridWidth::Fixed(l)) => GridSpec::new(require(&c.model_n, "model.N")?, l, require(&c.grid_n, "grid.n")?)?,
        _ => grid(c, &model(c)?)?,
    };
    let msk = mask(c, g)?;
    let cert = msk.certificate().cloned();
    let lambda = match (lambda, &cert) {
        (Some(l), _) => l,
        (None, Some(cert)) => cert.lambda,
        (None, None) => return Err(bad("--lambda", "no certificate for this set; pass --lambda and --a")),
    };
    let a = match (a.is_empty(), &cert) {
        (false, _) => a.to_vec(),
        (true, Some(cert)) => cert.a.clone(),
        (true, None) => return Err(bad("--a", "no certificate for this set; pass --lambda and --a")),
    };
    let a = if a.len() == 1 { vec![a[0]; g.dim()] } else { a };
    let rep = check_thickness(&msk, lambda, &a, translates)?;
    sink.with("mask.oumsk", |w| write_mask(w, &msk)).map_err(|e| CliError::io("mask.oumsk", e))?;
    let v = json!({
        "lambda": num(lambda),
        "a": nums(&a),
        "passed": rep.passed,
        "worst_fraction": num(rep.worst_fraction),
        "worst_origin": nums(&rep.worst_origin),
        "slack": num(rep.slack),
        "window_cells": rep.window_cells,
        "translates_checked": rep.translates_checked,
        "coverage": num(msk.coverage()),
        "grid": grid_json(&g),
        "certificate": cert.as_ref().map_or(Value::Null, |c| json!({
            "lambda": num(c.lambda),
            "a": nums(&c.a),
            "resolution": num(c.resolution),
        })),
    });
    save_json(sink, "thickness.json", &v)?;
    Ok(format!("lambda = {}  passed = {}  worst fraction = {}", fmt17(lambda), rep.passed, fmt17(rep.worst_fraction)))
}

fn operator(c: &ExperimentConfig) -> Result<(OuModel, ObservationOperator)> {
    let m = model(c)?;
    let g = grid(c, &m)?;
    let msk = mask(c, g)?;
    let op = ObservationOperator::new(&m, &msk, &times(c)?, &propagator(c)?)?;
    Ok((m, op))
}

pub fn reconstruct(c: &ExperimentConfig, sink: &mut Sink, quiet: bool) -> Result<String> {
    let (m, op) = operator(c)?;
    let seed = c.run_seed.unwrap_or(0);
    let u0 = datum(c, &m, op.grid(), seed)?;
    let warnings: Vec<String> = op.warnings(&u0)?.iter().map(|w| w.to_string()).collect();
    if !quiet {
        for w in &warnings {
            eprintln!("warning: {w}");
        }
    }
    let clean = op.observe(&u0, false)?;
    let noise = c.run_noise.unwrap_or(0.0);
    let data = if noise > 0.0 { add_noise(&clean, op.mask(), noise, seed)? } else { clean };
    let mut res = op.reconstruct_with(&data, alpha_rule(c), &cg(c))?;
    let err = res.compare(&u0)?;
    save_field(sink, c, "u0", &u0)?;
    save_field(sink, c, "u0_hat", &res.u0_hat)?;
    sink.with("mask.oumsk", |w| write_mask(w, op.mask())).map_err(|e| CliError::io("mask.oumsk", e))?;
    let v = json!({
        "alpha_reg": num(res.alpha_reg),
        "relative_error": opt(res.relative_error),
        "misfit": num(res.misfit),
        "cg_iterations": res.cg_iterations,
        "converged": res.converged,
        "final_residual": num(res.final_residual),
        "residual_history": nums(&res.residual_history),
        "noise_level": num(noise),
        "noise_misfit": num(data.noise_misfit),
        "grid": grid_json(op.grid()),
        "warnings": warnings,
    });
    save_json(sink, "reconstruction.json", &v)?;
    if !res.converged {
        return Err(CliError::NotConverged(format!(
            "conjugate gradients stopped after {} iterations at relative residual {:e}",
            res.cg_iterations, res.final_residual
        )));
    }
    Ok(format!("alpha = {}  relative error = {}", fmt17(res.alpha_reg), fmt17(err)))
}

pub fn stability(c: &ExperimentConfig, sink: &mut Sink) -> Result<String> {
    let (m, op) = operator(c)?;
    let levels = require(&c.run_noise_levels, "run.noise_levels")?;
    let seeds = c.run_seeds.clone().unwrap_or_else(|| vec![1]);
    let u0 = datum(c, &m, op.grid(), c.run_seed.unwrap_or(0))?;
    let fit = stability_sweep(&op, &u0, &levels, alpha_rule(c), &seeds, &cg(c))?;
    let rows: Vec<Vec<String>> = fit
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt17(r.level),
                r.seed.to_string(),
                fmt17(r.eta_l2),
                fmt17(r.eta_h1),
                fmt17(r.error),
                fmt17(r.alpha_reg),
                r.cg_iterations.to_string(),
            ]
        })
        .collect();
    save_csv(sink, "sweep.csv", &["level", "seed", "eta_l2", "eta_h1", "error", "alpha_reg", "cg_iterations"], &rows)?;
    let mut bound = BoundParameters::from_eps(c.run_eps.unwrap_or(0.5))?;
    if let Some(p) = c.run_p {
        bound.p = p;
    }
    if let Some(g) = c.run_gamma {
        bound.gamma = g;
    }
    bound.alpha = bound.gamma / bound.p;
    // Shape of the analytic bound with K = 1, where it is defined.
    let shape: Vec<Value> = match analyticity_angle(&m) {
        Ok(angle) if m.s() == 1.0 => fit
            .data_norms
            .iter()
            .map(|&eta| stability_bound_analytic(eta, &angle, bound.p, bound.alpha, 1.0).map_or(Value::Null, num))
            .collect(),
        _ => Vec::new(),
    };
    let v = json!({
        "C": num(fit.fitted_c),
        "alpha": num(fit.fitted_alpha),
        "r2": num(fit.fit_r2),
        "noise_levels": nums(&fit.noise_levels),
        "data_norms": nums(&fit.data_norms),
        "median_errors": nums(&fit.recon_errors),
        "monotone": fit.errors_monotone(),
        "bound": {
            "p": num(bound.p),
            "gamma": num(bound.gamma),
            "alpha": num(bound.alpha),
            "analytic_shape": shape,
        },
    });
    save_json(sink, "fit.json", &v)?;
    if c.wants("svg") {
        sink.bytes("sweep.svg", crate::svg::sweep_plot(&fit).as_bytes()).map_err(|e| CliError::io("sweep.svg", e))?;
    }
    Ok(format!("fitted alpha = {}  C = {}  R^2 = {}", fmt17(fit.fitted_alpha), fmt17(fit.fitted_c), fmt17(fit.fit_r2)))
}
