//! Field serialization: a 32-byte header followed by interleaved little-endian
//! `re, im` pairs, and a CSV export for plotting.
//!
//! Header layout: magic `OUFLD1` (6 bytes), 2 zero bytes, `dim: u32`, `n: u32`,
//! `L: f64`, 8 zero bytes.

use std::io::{self, Read, Write};

use num_complex::Complex64;

use super::{Field, GridSpec};

pub const FIELD_MAGIC: &[u8; 6] = b"OUFLD1";
pub const HEADER_LEN: usize = 32;

pub(crate) fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 6], grid: &GridSpec) -> io::Result<()> {
    let mut h = [0u8; HEADER_LEN];
    h[..6].copy_from_slice(magic);
    h[8..12].copy_from_slice(&(grid.dim() as u32).to_le_bytes());
    h[12..16].copy_from_slice(&(grid.n() as u32).to_le_bytes());
    h[16..24].copy_from_slice(&grid.half_width().to_le_bytes());
    w.write_all(&h)
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 6]) -> io::Result<GridSpec> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    if &h[..6] != magic {
        return Err(invalid(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    let dim = u32::from_le_bytes(h[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(h[12..16].try_into().unwrap()) as usize;
    let l = f64::from_le_bytes(h[16..24].try_into().unwrap());
    GridSpec::new(dim, l, n).map_err(|e| invalid(e.to_string()))
}

pub fn write_field<W: Write>(w: &mut W, f: &Field) -> io::Result<()> {
    write_header(w, FIELD_MAGIC, f.grid())?;
    let mut buf = Vec::with_capacity(16 * f.values().len());
    for v in f.values() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_field<R: Read>(r: &mut R) -> io::Result<Field> {
    let grid = read_header(r, FIELD_MAGIC)?;
    let mut buf = vec![0u8; 16 * grid.len()];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Field::new(grid, values).map_err(|e| invalid(e.to_string()))
}

/// CSV with columns `x` (1D) or `x,y` (2D), then `re,im`.
pub fn write_field_csv<W: Write>(w: &mut W, f: &Field) -> io::Result<()> {
    let g = f.grid();
    if g.dim() == 1 {
        writeln!(w, "x,re,im")?;
    } else {
        writeln!(w, "x,y,re,im")?;
    }
    for (idx, v) in f.values().iter().enumerate() {
        let p = g.point(idx);
        if g.dim() == 1 {
            writeln!(w, "{:e},{:e},{:e}", p[0], v.re, v.im)?;
        } else {
            writeln!(w, "{:e},{:e},{:e},{:e}", p[0], p[1], v.re, v.im)?;
        }
    }
    Ok(())
}
