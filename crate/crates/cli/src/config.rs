//! Flat `key = value` experiment files with dotted section names.
//!
//! ```text
//! # comment
//! model.N = 2
//! model.Q = "1 0 0 1"
//! grid.L = auto
//! ```
//!
//! Lists are whitespace separated. Every key must be one of [`KEYS`].

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Syntax { line: usize, msg: String },
    UnknownKey(String),
    Duplicate(String),
    Missing(String),
    BadValue { key: String, msg: String },
    Io { path: String, msg: String },
}

impl ConfigError {
    /// The offending key, if there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) | ConfigError::Duplicate(k) | ConfigError::Missing(k) => Some(k),
            ConfigError::BadValue { key, .. } => Some(key),
            _ => None,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax { line, msg } => write!(f, "line {line}: {msg}"),
            ConfigError::UnknownKey(k) => write!(f, "unknown key {k}"),
            ConfigError::Duplicate(k) => write!(f, "key {k} given twice"),
            ConfigError::Missing(k) => write!(f, "missing required key {k}"),
            ConfigError::BadValue { key, msg } => write!(f, "{key}: {msg}"),
            ConfigError::Io { path, msg } => write!(f, "{path}: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Accepted keys, in emission order.
pub const KEYS: &[&str] = &[
    "model.N",
    "model.Q",
    "model.B",
    "model.s",
    "grid.L",
    "grid.n",
    "set.kind",
    "set.period",
    "set.width",
    "set.cell",
    "set.p",
    "set.seed",
    "set.mask",
    "run.T",
    "run.times",
    "run.noise",
    "run.noise_levels",
    "run.seeds",
    "run.seed",
    "run.eps",
    "run.M",
    "run.norm",
    "run.datum",
    "run.method",
    "run.trials",
    "run.alpha",
    "run.cg_tol",
    "run.cg_max_iter",
    "run.quad_tol",
    "run.interp",
    "run.oversample",
    "run.kernel_quad_points",
    "run.time_samples",
    "run.sphere_samples",
    "run.slack",
    "run.p",
    "run.gamma",
    "output.dir",
    "output.formats",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridWidth {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetKind {
    Full,
    Slabs,
    Cubes,
    Bernoulli,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fourier,
    Kolmogorov,
}

/// `run.alpha`: a fixed Tikhonov weight or the discrepancy principle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaChoice {
    Discrepancy,
    Fixed(f64),
}

/// Typed view of an experiment file. Absent keys stay `None`; subcommands
/// ask for what they need through [`require`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model_n: Option<usize>,
    pub model_q: Option<Vec<f64>>,
    pub model_b: Option<Vec<f64>>,
    pub model_s: Option<f64>,
    pub grid_l: Option<GridWidth>,
    pub grid_n: Option<usize>,
    pub set_kind: Option<SetKind>,
    pub set_period: Option<f64>,
    pub set_width: Option<f64>,
    pub set_cell: Option<f64>,
    pub set_p: Option<f64>,
    pub set_seed: Option<u64>,
    pub set_mask: Option<String>,
    pub run_t: Option<f64>,
    pub run_times: Option<Vec<f64>>,
    pub run_noise: Option<f64>,
    pub run_noise_levels: Option<Vec<f64>>,
    pub run_seeds: Option<Vec<u64>>,
    pub run_seed: Option<u64>,
    pub run_eps: Option<f64>,
    pub run_m: Option<f64>,
    pub run_norm: Option<String>,
    pub run_datum: Option<String>,
    pub run_method: Option<Method>,
    pub run_trials: Option<usize>,
    pub run_alpha: Option<AlphaChoice>,
    pub run_cg_tol: Option<f64>,
    pub run_cg_max_iter: Option<usize>,
    pub run_quad_tol: Option<f64>,
    pub run_interp: Option<String>,
    pub run_oversample: Option<usize>,
    pub run_kernel_quad_points: Option<usize>,
    pub run_time_samples: Option<usize>,
    pub run_sphere_samples: Option<usize>,
    pub run_slack: Option<f64>,
    pub run_p: Option<f64>,
    pub run_gamma: Option<f64>,
    pub output_dir: Option<String>,
    pub output_formats: Option<Vec<String>>,
}

/// Splits the text into raw `(key, value)` pairs, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_assignment(line).map_err(|msg| ConfigError::Syntax { line: i + 1, msg })?;
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey(k));
        }
        if out.insert(k.clone(), v).is_some() {
            return Err(ConfigError::Duplicate(k));
        }
    }
    Ok(out)
}

/// `key = value`, with optional double quotes around the value.
pub fn split_assignment(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key = value, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    let mut v = v.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        v = &v[1..v.len() - 1];
    }
    Ok((k.to_string(), v.to_string()))
}

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), msg: msg.into() }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| bad(key, format!("cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split_whitespace().map(|w| num(key, w)).collect()
}

fn fmt_list<T: fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }

    /// Assigns one key, overriding any earlier value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model.N" => self.model_n = Some(num(key, v)?),
            "model.Q" => self.model_q = Some(list(key, v)?),
            "model.B" => self.model_b = Some(list(key, v)?),
            "model.s" => self.model_s = Some(num(key, v)?),
            "grid.L" => {
                self.grid_l = Some(if v.trim() == "auto" { GridWidth::Auto } else { GridWidth::Fixed(num(key, v)?) })
            }
            "grid.n" => self.grid_n = Some(num(key, v)?),
            "set.kind" => {
                self.set_kind = Some(match v.trim() {
                    "full" => SetKind::Full,
                    "slabs" => SetKind::Slabs,
                    "cubes" => SetKind::Cubes,
                    "bernoulli" => SetKind::Bernoulli,
                    "custom" => SetKind::Custom,
                    o => return Err(bad(key, format!("{o:?} is not one of full, slabs, cubes, bernoulli, custom"))),
                })
            }
            "set.period" => self.set_period = Some(num(key, v)?),
            "set.width" => self.set_width = Some(num(key, v)?),
            "set.cell" => self.set_cell = Some(num(key, v)?),
            "set.p" => self.set_p = Some(num(key, v)?),
            "set.seed" => self.set_seed = Some(num(key, v)?),
            "set.mask" => self.set_mask = Some(v.to_string()),
            "run.T" => self.run_t = Some(num(key, v)?),
            "run.times" => self.run_times = Some(list(key, v)?),
            "run.noise" => self.run_noise = Some(num(key, v)?),
            "run.noise_levels" => self.run_noise_levels = Some(list(key, v)?),
            "run.seeds" => self.run_seeds = Some(list(key, v)?),
            "run.seed" => self.run_seed = Some(num(key, v)?),
            "run.eps" => self.run_eps = Some(num(key, v)?),
            "run.M" => self.run_m = Some(num(key, v)?),
            "run.norm" => match v.trim() {
                "lebesgue" | "weighted" => self.run_norm = Some(v.trim().to_string()),
                o => return Err(bad(key, format!("{o:?} is not one of lebesgue, weighted"))),
            },
            "run.datum" => self.run_datum = Some(v.to_string()),
            "run.method" => {
                self.run_method = Some(match v.trim() {
                    "fourier" => Method::Fourier,
                    "kolmogorov" => Method::Kolmogorov,
                    o => return Err(bad(key, format!("{o:?} is not one of fourier, kolmogorov"))),
                })
            }
            "run.trials" => self.run_trials = Some(num(key, v)?),
            "run.alpha" => {
                self.run_alpha = Some(if v.trim() == "discrepancy" {
                    AlphaChoice::Discrepancy
                } else {
                    AlphaChoice::Fixed(num(key, v)?)
                })
            }
            "run.cg_tol" => self.run_cg_tol = Some(num(key, v)?),
            "run.cg_max_iter" => self.run_cg_max_iter = Some(num(key, v)?),
            "run.quad_tol" => self.run_quad_tol = Some(num(key, v)?),
            "run.interp" => match v.trim() {
                "nearest" | "linear" | "cubic-spline" => self.run_interp = Some(v.trim().to_string()),
                o => return Err(bad(key, format!("{o:?} is not one of nearest, linear, cubic-spline"))),
            },
            "run.oversample" => self.run_oversample = Some(num(key, v)?),
            "run.kernel_quad_points" => self.run_kernel_quad_points = Some(num(key, v)?),
            "run.time_samples" => self.run_time_samples = Some(num(key, v)?),
            "run.sphere_samples" => self.run_sphere_samples = Some(num(key, v)?),
            "run.slack" => self.run_slack = Some(num(key, v)?),
            "run.p" => self.run_p = Some(num(key, v)?),
            "run.gamma" => self.run_gamma = Some(num(key, v)?),
            "output.dir" => self.output_dir = Some(v.to_string()),
            "output.formats" => self.output_formats = Some(v.split_whitespace().map(str::to_string).collect()),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Serializes back to the file format; parsing the result gives `self` again.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push_str(&format!("{k} = \"{v}\"\n"));
            }
        };
        put("model.N", self.model_n.map(|v| v.to_string()));
        put("model.Q", self.model_q.as_deref().map(fmt_list));
        put("model.B", self.model_b.as_deref().map(fmt_list));
        put("model.s", self.model_s.map(|v| format!("{v:?}")));
        put(
            "grid.L",
            self.grid_l.map(|w| match w {
                GridWidth::Auto => "auto".to_string(),
                GridWidth::Fixed(l) => format!("{l:?}"),
            }),
        );
        put("grid.n", self.grid_n.map(|v| v.to_string()));
        put(
            "set.kind",
            self.set_kind.as_ref().map(|k| {
                match k {
                    SetKind::Full => "full",
                    SetKind::Slabs => "slabs",
                    SetKind::Cubes => "cubes",
                    SetKind::Bernoulli => "bernoulli",
                    SetKind::Custom => "custom",
                }
                .to_string()
            }),
        );
        put("set.period", self.set_period.map(|v| format!("{v:?}")));
        put("set.width", self.set_width.map(|v| format!("{v:?}")));
        put("set.cell", self.set_cell.map(|v| format!("{v:?}")));
        put("set.p", self.set_p.map(|v| format!("{v:?}")));
        put("set.seed", self.set_seed.map(|v| v.to_string()));
        put("set.mask", self.set_mask.clone());
        put("run.T", self.run_t.map(|v| format!("{v:?}")));
        put("run.times", self.run_times.as_deref().map(fmt_list));
        put("run.noise", self.run_noise.map(|v| format!("{v:?}")));
        put("run.noise_levels", self.run_noise_levels.as_deref().map(fmt_list));
        put("run.seeds", self.run_seeds.as_deref().map(fmt_list));
        put("run.seed", self.run_seed.map(|v| v.to_string()));
        put("run.eps", self.run_eps.map(|v| format!("{v:?}")));
        put("run.M", self.run_m.map(|v| format!("{v:?}")));
        put("run.norm", self.run_norm.clone());
        put("run.datum", self.run_datum.clone());
        put(
            "run.method",
            self.run_method.map(|m| match m {
                Method::Fourier => "fourier".to_string(),
                Method::Kolmogorov => "kolmogorov".to_string(),
            }),
        );
        put("run.trials", self.run_trials.map(|v| v.to_string()));
        put(
            "run.alpha",
            self.run_alpha.map(|a| match a {
                AlphaChoice::Discrepancy => "discrepancy".to_string(),
                AlphaChoice::Fixed(x) => format!("{x:?}"),
            }),
        );
        put("run.cg_tol", self.run_cg_tol.map(|v| format!("{v:?}")));
        put("run.cg_max_iter", self.run_cg_max_iter.map(|v| v.to_string()));
        put("run.quad_tol", self.run_quad_tol.map(|v| format!("{v:?}")));
        put("run.interp", self.run_interp.clone());
        put("run.oversample", self.run_oversample.map(|v| v.to_string()));
        put("run.kernel_quad_points", self.run_kernel_quad_points.map(|v| v.to_string()));
        put("run.time_samples", self.run_time_samples.map(|v| v.to_string()));
        put("run.sphere_samples", self.run_sphere_samples.map(|v| v.to_string()));
        put("run.slack", self.run_slack.map(|v| format!("{v:?}")));
        put("run.p", self.run_p.map(|v| format!("{v:?}")));
        put("run.gamma", self.run_gamma.map(|v| format!("{v:?}")));
        put("output.dir", self.output_dir.clone());
        put("output.formats", self.output_formats.as_ref().map(|f| f.join(" ")));
        out
    }

    pub fn wants(&self, format: &str) -> bool {
        match &self.output_formats {
            Some(f) => f.iter().any(|x| x == format),
            None => matches!(format, "json" | "csv"),
        }
    }
}

pub fn require<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone().ok_or_else(|| ConfigError::Missing(key.to_string()))
}
