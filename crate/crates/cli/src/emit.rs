//! Byte-stable number formatting and file emission.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{Number, Value};

/// 17 significant digits, positional for moderate exponents and scientific otherwise.
/// Non-finite values print as `NaN`, `inf` and `-inf`.
pub fn fmt17(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..16).contains(&exp) {
        format!("{:.*}", (16 - exp) as usize, x)
    } else {
        format!("{x:.16e}")
    }
}

/// JSON number with 17 significant digits; `null` when not finite.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    Value::Number(fmt17(x).parse::<Number>().expect("formatted float is a JSON number"))
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// Output directory with helpers that record every file written.
pub struct Sink {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> io::Result<()> {
        let p = self.path(name);
        fs::write(&p, data)?;
        self.written.push(p);
        Ok(())
    }

    pub fn json(&mut self, name: &str, v: &Value) -> io::Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
        s.push('\n');
        self.bytes(name, s.as_bytes())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.bytes(name, s.as_bytes())
    }

    /// Writes through a closure that gets a buffered writer.
    pub fn with<F>(&mut self, name: &str, f: F) -> io::Result<()>
    where
        F: FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>,
    {
        let p = self.path(name);
        let mut w = io::BufWriter::new(fs::File::create(&p)?);
        f(&mut w)?;
        io::Write::flush(&mut w)?;
        self.written.push(p);
        Ok(())
    }
}
