//! Mask serialization: the field header with magic `OUMSK1`, then `runs: u64`
//! and that many `u64` run lengths alternating between outside and inside
//! (the first run is outside and may be empty), then a certificate flag byte,
//! followed when set by `λ`, `h` and one `aⱼ` per axis as `f64`.

use std::io::{self, Read, Write};

use crate::field::io::{invalid, read_header, write_header};

use super::{Certificate, ObservationMask};

pub const MASK_MAGIC: &[u8; 6] = b"OUMSK1";

fn runs(mask: &[bool]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &b in mask {
        if b == current {
            len += 1;
        } else {
            out.push(len);
            current = b;
            len = 1;
        }
    }
    out.push(len);
    out
}

pub fn write_mask<W: Write>(w: &mut W, m: &ObservationMask) -> io::Result<()> {
    write_header(w, MASK_MAGIC, m.grid())?;
    let rle = runs(m.mask());
    w.write_all(&(rle.len() as u64).to_le_bytes())?;
    for r in rle {
        w.write_all(&r.to_le_bytes())?;
    }
    match m.certificate() {
        None => w.write_all(&[0]),
        Some(c) => {
            w.write_all(&[1])?;
            for v in [c.lambda, c.resolution].iter().chain(&c.a) {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        }
    }
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    read_u64(r).map(f64::from_bits)
}

pub fn read_mask<R: Read>(r: &mut R) -> io::Result<ObservationMask> {
    let grid = read_header(r, MASK_MAGIC)?;
    let count = read_u64(r)?;
    let mut mask = Vec::with_capacity(grid.len());
    let mut value = false;
    for _ in 0..count {
        let len = read_u64(r)? as usize;
        if mask.len() + len > grid.len() {
            return Err(invalid("run lengths exceed the grid size"));
        }
        mask.extend(std::iter::repeat_n(value, len));
        value = !value;
    }
    if mask.len() != grid.len() {
        return Err(invalid(format!("runs cover {} of {} points", mask.len(), grid.len())));
    }
    let mut flag = [0u8];
    r.read_exact(&mut flag)?;
    let certificate = match flag[0] {
        0 => None,
        1 => {
            let lambda = read_f64(r)?;
            let resolution = read_f64(r)?;
            let a = (0..grid.dim()).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
            Some(Certificate { lambda, a, resolution })
        }
        other => return Err(invalid(format!("bad certificate flag {other}"))),
    };
    ObservationMask::new(grid, mask, certificate).map_err(|e| invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use crate::thickset::{build_mask, ThickSetSpec};

    #[test]
    fn round_trip() {
        let g = GridSpec::new(2, 4.0, 32).unwrap();
        for spec in [
            ThickSetSpec::Full,
            ThickSetSpec::PeriodicCubes { period: 1.0, width: 0.25 },
            ThickSetSpec::BernoulliCells { cell: 0.5, p: 0.5, seed: 1 },
        ] {
            let m = build_mask(&spec, g).unwrap();
            let mut buf = Vec::new();
            write_mask(&mut buf, &m).unwrap();
            assert_eq!(read_mask(&mut buf.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn rejects_garbage() {
        let g = GridSpec::new(1, 4.0, 16).unwrap();
        let m = build_mask(&ThickSetSpec::Full, g).unwrap();
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_mask(&mut bad.as_slice()).is_err());
        // Corrupt the single inside run length.
        let mut long = buf.clone();
        long[48] = 200;
        assert!(read_mask(&mut long.as_slice()).is_err());
        assert!(read_mask(&mut &buf[..buf.len() - 1]).is_err());
    }
}
