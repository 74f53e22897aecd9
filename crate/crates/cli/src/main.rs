//! `ou-inverse`: runs one experiment from a flat config file and writes its
//! artifacts to the output directory.
//!
//! Exit codes: 0 success, 1 numerical non-convergence or I/O failure, 2 bad
//! configuration, 3 domain or regime refusal. Failures also print one JSON
//! object on stderr.

mod commands;
mod config;
mod emit;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ou_inverse::OuError;
use serde_json::json;

use config::{split_assignment, ConfigError, ExperimentConfig};
use emit::Sink;

#[derive(Parser)]
#[command(name = "ou-inverse", version, about = "Ornstein-Uhlenbeck semigroup experiments")]
struct Cli {
    /// Experiment file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed of the sampled initial data, overriding `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gramian and analyticity angle of the model.
    Angle,
    /// Propagate a datum to `run.times`.
    Propagate,
    /// Fractional (and, for s = 1, weighted) log-convexity checks on random data.
    ConvexityCheck,
    /// Check (λ, a)-thickness of the observation set.
    ThicknessCheck {
        #[arg(long)]
        lambda: Option<f64>,
        /// Window side lengths, comma separated; one value is used on every axis.
        #[arg(long, value_delimiter = ',')]
        a: Vec<f64>,
        #[arg(long, default_value_t = 4096)]
        translates: usize,
    },
    /// Tikhonov reconstruction of one datum from masked observations.
    Reconstruct,
    /// Reconstructions over noise levels and seeds with a logarithmic fit.
    StabilitySweep,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Ou(OuError),
    Io { path: String, msg: String },
    NotConverged(String),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, e: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), msg: e.to_string() }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Ou(e) => match e {
                OuError::InvalidModel(_) | OuError::InvalidGrid(_) | OuError::InvalidArgument(_) => 2,
                OuError::DomainTooSmall(_)
                | OuError::RegimeRefused(_)
                | OuError::HurwitzViolation { .. }
                | OuError::FractionalUnsupported(_)
                | OuError::ResolutionTooCoarse(_)
                | OuError::DomainError(_) => 3,
                _ => 1,
            },
            CliError::Io { .. } | CliError::NotConverged(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Io { .. } => "IoError",
            CliError::NotConverged(_) => "NotConverged",
            CliError::Ou(e) => match e {
                OuError::InvalidModel(_) => "InvalidModel",
                OuError::InvalidGrid(_) => "InvalidGrid",
                OuError::InvalidArgument(_) => "InvalidArgument",
                OuError::HurwitzViolation { .. } => "HurwitzViolation",
                OuError::QuadratureNonConvergence { .. } => "QuadratureNonConvergence",
                OuError::DomainTooSmall(_) => "DomainTooSmall",
                OuError::FractionalUnsupported(_) => "FractionalUnsupported",
                OuError::DegenerateNorm(_) => "DegenerateNorm",
                OuError::DomainError(_) => "DomainError",
                OuError::ResolutionTooCoarse(_) => "ResolutionTooCoarse",
                OuError::GridMismatch => "GridMismatch",
                OuError::MissingDerivative => "MissingDerivative",
                OuError::RegimeRefused(_) => "RegimeRefused",
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(e) => e.to_string(),
            CliError::Ou(e) => e.to_string(),
            CliError::Io { path, msg } => format!("{path}: {msg}"),
            CliError::NotConverged(m) => m.clone(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let key = match self {
            CliError::Config(e) => e.key().map(str::to_string),
            _ => None,
        };
        json!({
            "error": self.kind(),
            "key": key,
            "message": self.message(),
            "exit_code": self.exit_code(),
        })
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<OuError> for CliError {
    fn from(e: OuError) -> Self {
        CliError::Ou(e)
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io { path: p.display().to_string(), msg: e.to_string() })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for s in &cli.set {
        let (k, v) = split_assignment(s).map_err(|msg| ConfigError::Syntax { line: 0, msg })?;
        if !config::KEYS.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey(k).into());
        }
        cfg.set(&k, &v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.run_seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn set_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("OU_INVERSE_THREADS") else {
        return Ok(());
    };
    let bad =
        || ConfigError::BadValue { key: "OU_INVERSE_THREADS".into(), msg: format!("{v:?} is not a positive integer") };
    let n: usize = v.trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad().into());
    }
    // Fails only if a pool already exists, which cannot happen this early.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(cli: &Cli) -> Result<String, CliError> {
    set_threads()?;
    let cfg = load(cli)?;
    let dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| ".".into()));
    let mut sink = Sink::new(&dir).map_err(|e| CliError::io(&dir, e))?;
    // The resolved config, overrides included, so the run can be repeated.
    sink.bytes("config.txt", cfg.to_text().as_bytes()).map_err(|e| CliError::io("config.txt", e))?;
    match &cli.cmd {
        Command::Angle => commands::angle(&cfg, &mut sink),
        Command::Propagate => commands::propagate(&cfg, &mut sink),
        Command::ConvexityCheck => commands::convexity_check(&cfg, &mut sink),
        Command::ThicknessCheck { lambda, a, translates } => {
            commands::thickness_check(&cfg, &mut sink, *lambda, a, *translates)
        }
        Command::Reconstruct => commands::reconstruct(&cfg, &mut sink, cli.quiet),
        Command::StabilitySweep => commands::stability(&cfg, &mut sink),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
