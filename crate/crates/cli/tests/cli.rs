use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use ou_inverse::field::io::read_field;
use ou_inverse::thickset::io::read_mask;
use serde_json::Value;
use tempfile::TempDir;

const SCALAR: &str = "\
model.N = 1
model.Q = \"1\"
model.B = \"-1\"
model.s = 1
grid.L = auto
grid.n = 128
run.T = 1
run.times = \"0.25 0.5 1\"
";

fn run(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ou-inverse"));
    cmd.current_dir(dir).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn with_config(text: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("exp.cfg"), text).unwrap();
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)))
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn angle_of_the_isotropic_contraction_is_a_right_angle() {
    let dir = with_config("model.N = 2\nmodel.Q = \"1 0 0 1\"\nmodel.B = \"-1 0 0 -1\"\n");
    let out = run(dir.path(), &["angle", "--config", "exp.cfg", "--out", "o"], &[]);
    assert!(out.status.success());
    let v = json(&dir.path().join("o/angle.json"));
    assert_eq!(f(&v["psi"]), std::f64::consts::FRAC_PI_2);
    assert!(fs::read_to_string(dir.path().join("o/angle.json")).unwrap().contains("1.5707963267948966"));
    assert_eq!(f(&v["q_inf"][0][0]), 0.5);
}

#[test]
fn missing_and_unknown_keys_exit_with_two() {
    let dir = with_config("model.N = 1\nmodel.B = \"-1\"\n");
    let out = run(dir.path(), &["angle", "--config", "exp.cfg", "--out", "o"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["key"], "model.Q");
    assert!(e["message"].as_str().unwrap().contains("model.Q"));

    let out = run(dir.path(), &["angle", "--config", "exp.cfg", "--set", "model.X=3"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["key"], "model.X");

    let dir = with_config("model.N = 1\nmodel.Q = 1\nmodel.B = -1\nmodel.colour = red\n");
    let out = run(dir.path(), &["angle", "--config", "exp.cfg"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = with_config(SCALAR);
    let out = run(dir.path(), &["angle", "--config", "exp.cfg", "--quiet"], &[("OU_INVERSE_THREADS", "0")]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["angle", "--config", "exp.cfg", "--quiet"], &[("OU_INVERSE_THREADS", "2")]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn low_order_sweep_on_slabs_is_refused() {
    let cfg = format!(
        "{SCALAR}model.s = 0.4\nset.kind = slabs\nset.period = 1\nset.width = 0.5\nrun.noise_levels = \"1e-4 1e-3 1e-2 1e-1\"\n"
    )
    .replace("model.s = 1\n", "");
    let dir = with_config(&cfg);
    let out = run(dir.path(), &["stability-sweep", "--config", "exp.cfg", "--out", "o"], &[]);
    assert_eq!(out.status.code(), Some(3));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "RegimeRefused");
    assert!(e["message"].as_str().unwrap().contains("observability"));
}

#[test]
fn kolmogorov_propagation_refuses_fractional_orders() {
    let dir = with_config(SCALAR);
    let out = run(
        dir.path(),
        &["propagate", "--config", "exp.cfg", "--set", "model.s=0.5", "--set", "run.method=kolmogorov"],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "FractionalUnsupported");
}

#[test]
fn propagation_is_byte_stable_and_re_readable() {
    let dir = with_config(&format!("{SCALAR}output.formats = \"json csv field-csv\"\n"));
    for o in ["a", "b"] {
        let out = run(dir.path(), &["propagate", "--config", "exp.cfg", "--seed", "5", "--out", o, "--quiet"], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["norms.csv", "u_002.oufld", "u_002.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let norms = fs::read_to_string(dir.path().join("a/norms.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        norms.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    // The L² norm grows like e^{t/2} under a contracting drift in 1D.
    for r in &rows[1..] {
        assert!(r[1] <= (0.5 * r[0]).exp() * rows[0][1] * (1.0 + 1e-8));
    }
    let u = read_field(&mut BufReader::new(fs::File::open(dir.path().join("a/u_002.oufld")).unwrap())).unwrap();
    assert_eq!(u.grid().n(), 128);
    let norm = ou_inverse::field::norm_l2(&u);
    assert_eq!(norm.to_bits(), rows[3][1].to_bits());
    // The resolved config parses back to itself.
    let again = run(dir.path(), &["propagate", "--config", "a/config.txt", "--out", "c", "--quiet"], &[]);
    assert!(again.status.success());
    assert_eq!(fs::read(dir.path().join("a/norms.csv")).unwrap(), fs::read(dir.path().join("c/norms.csv")).unwrap());
}

#[test]
fn thickness_check_of_half_slabs() {
    let cfg = "model.N = 1\ngrid.L = 8\ngrid.n = 512\nset.kind = slabs\nset.period = 1\nset.width = 0.5\n";
    let dir = with_config(cfg);
    let out = run(dir.path(), &["thickness-check", "--config", "exp.cfg", "--out", "o"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("o/thickness.json"));
    assert_eq!(v["passed"], true);
    assert_eq!(f(&v["lambda"]), 0.5);

    let out =
        run(dir.path(), &["thickness-check", "--config", "exp.cfg", "--out", "p", "--lambda", "0.6", "--a", "1"], &[]);
    assert!(out.status.success());
    assert_eq!(json(&dir.path().join("p/thickness.json"))["passed"], false);

    let mask = read_mask(&mut BufReader::new(fs::File::open(dir.path().join("o/mask.oumsk")).unwrap())).unwrap();
    assert_eq!(mask.count(), 256);
    // A custom set read back from the file gives the same verdict.
    let out = run(
        dir.path(),
        &[
            "thickness-check",
            "--config",
            "exp.cfg",
            "--out",
            "q",
            "--set",
            "set.kind=custom",
            "--set",
            "set.mask=o/mask.oumsk",
            "--lambda",
            "0.5",
            "--a",
            "1",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&dir.path().join("q/thickness.json"))["passed"], true);
}

#[test]
fn convexity_check_writes_rows_per_trial() {
    let cfg = SCALAR.replace("run.times = \"0.25 0.5 1\"", "run.times = \"0 0.25 0.5 1\"");
    let dir = with_config(&format!("{cfg}run.trials = 3\n"));
    let out = run(dir.path(), &["convexity-check", "--config", "exp.cfg", "--out", "o"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("o/convexity.json"));
    let exact = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((f(&v["c"]) - exact).abs() <= 1e-6);
    assert_eq!(v["passed"], true);
    assert!(f(&v["k_needed_analytic"]) <= 1.0 + 1e-6);
    let csv = fs::read_to_string(dir.path().join("o/convexity.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("trial,t,lhs,rhs,ratio"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
}

#[test]
fn reconstruction_round_trips_and_reports_non_convergence() {
    let cfg = format!("{SCALAR}set.kind = slabs\nset.period = 1\nset.width = 0.5\nrun.noise = 1e-3\n");
    let dir = with_config(&cfg);
    let out = run(dir.path(), &["reconstruct", "--config", "exp.cfg", "--out", "o"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("o/reconstruction.json"));
    assert_eq!(v["converged"], true);
    let err = f(&v["relative_error"]);
    assert!(err > 0.0 && err < 1.0, "{err}");
    let read =
        |name: &str| read_field(&mut BufReader::new(fs::File::open(dir.path().join("o").join(name)).unwrap())).unwrap();
    let (u0, hat) = (read("u0.oufld"), read("u0_hat.oufld"));
    let back = ou_inverse::field::norm_l2(&hat.sub(&u0).unwrap()) / ou_inverse::field::norm_l2(&u0);
    assert_eq!(back, err);

    let out = run(
        dir.path(),
        &["reconstruct", "--config", "exp.cfg", "--out", "p", "--set", "run.cg_max_iter=1", "--set", "run.alpha=1e-8"],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "NotConverged");
    assert_eq!(json(&dir.path().join("p/reconstruction.json"))["converged"], false);
}

#[test]
fn stability_sweep_emits_csv_fit_and_plot() {
    let cfg = format!(
        "{SCALAR}set.kind = slabs\nset.period = 1\nset.width = 0.5\n\
         run.noise_levels = \"1e-4 1e-3 1e-2 1e-1\"\nrun.seeds = \"1 2\"\noutput.formats = \"json csv svg\"\n"
    );
    let dir = with_config(&cfg);
    for o in ["a", "b"] {
        let out = run(dir.path(), &["stability-sweep", "--config", "exp.cfg", "--out", o, "--quiet"], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["sweep.csv", "fit.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap()
        );
    }
    let csv = fs::read_to_string(dir.path().join("a/sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("level,seed,eta_l2,eta_h1,error,alpha_reg,cg_iterations"));
    assert_eq!(csv.lines().count(), 1 + 8);
    let fit = json(&dir.path().join("a/fit.json"));
    assert!(f(&fit["alpha"]).is_finite() && f(&fit["C"]).is_finite());
    assert!(fit["r2"].is_number());
    let svg = fs::read_to_string(dir.path().join("a/sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}
