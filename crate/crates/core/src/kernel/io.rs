//! Matrix and kernel files.
//!
//! Binary matrix layout, all integers and floats little-endian:
//!
//! ```text
//! "SGDP" | version u8 = 1 | k u8 | band.lo u32 | band.hi u32
//! filled: n bytes (0 or 1) | visits: n × u64 | rows: n × n × f64
//! ```
//!
//! with `n = band.hi − band.lo + 1`. A kernel file is
//!
//! ```text
//! "SGDQ" | version u8 = 1 | d u32 | λ: d × d × f64
//! diagonal blocks: d matrices | cross count u32 | (i u32, j u32, matrix)*
//! ```

use std::io::{Read, Write};

use super::{BlockKernel, PartialTransitionMatrix};
use crate::error::{Error, Result};
use crate::quantizer::{Band, Precision};

const MATRIX_MAGIC: &[u8; 4] = b"SGDP";
const KERNEL_MAGIC: &[u8; 4] = b"SGDQ";
const VERSION: u8 = 1;

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let got: [u8; 4] = read_array(r)?;
    if &got != magic {
        return Err(Error::Format(format!("bad magic {got:?}")));
    }
    let [version] = read_array(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_matrix<W: Write>(m: &PartialTransitionMatrix, w: &mut W) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&[VERSION, u8::from(m.precision)])?;
    w.write_all(&m.band.lo.to_le_bytes())?;
    w.write_all(&m.band.hi.to_le_bytes())?;
    let mask: Vec<u8> = m.filled.iter().map(|&f| f as u8).collect();
    w.write_all(&mask)?;
    for v in &m.visits {
        w.write_all(&v.to_le_bytes())?;
    }
    for x in &m.data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<PartialTransitionMatrix> {
    expect_header(r, MATRIX_MAGIC)?;
    let [k] = read_array(r)?;
    let precision = Precision::new(k).map_err(|e| Error::Format(e.to_string()))?;
    let lo = read_u32(r)?;
    let hi = read_u32(r)?;
    if lo > hi || hi as usize >= precision.num_states() {
        return Err(Error::Format(format!("band [{lo}, {hi}] invalid for precision {k}")));
    }
    let mut m = PartialTransitionMatrix::with_band(precision, Band { lo, hi });
    let n = m.size();
    let mut mask = vec![0u8; n];
    r.read_exact(&mut mask)?;
    for (f, b) in m.filled.iter_mut().zip(&mask) {
        *f = match b {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("filled flag {other}"))),
        };
    }
    for v in m.visits.iter_mut() {
        *v = u64::from_le_bytes(read_array(r)?);
    }
    for x in m.data.iter_mut() {
        *x = read_f64(r)?;
    }
    Ok(m)
}

/// Human-readable dump: `#` header lines, then one row per state.
pub fn write_matrix_csv<W: Write>(m: &PartialTransitionMatrix, w: &mut W) -> Result<()> {
    writeln!(w, "# k={}", m.precision)?;
    writeln!(w, "# band={},{}", m.band.lo, m.band.hi)?;
    let mask: String = m.filled.iter().map(|&f| if f { '1' } else { '0' }).collect();
    writeln!(w, "# filled={mask}")?;
    write!(w, "state,filled,visits")?;
    for j in m.band.indices() {
        write!(w, ",p_{j}")?;
    }
    writeln!(w)?;
    for (r, i) in m.band.indices().enumerate() {
        write!(w, "{i},{},{}", m.filled[r] as u8, m.visits[r])?;
        for x in m.local_row(r) {
            write!(w, ",{x:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_kernel<W: Write>(q: &BlockKernel, w: &mut W) -> Result<()> {
    w.write_all(KERNEL_MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(q.dim() as u32).to_le_bytes())?;
    for row in &q.lambda {
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for b in &q.diagonal {
        write_matrix(b, w)?;
    }
    w.write_all(&(q.cross.len() as u32).to_le_bytes())?;
    for ((i, j), b) in &q.cross {
        w.write_all(&(*i as u32).to_le_bytes())?;
        w.write_all(&(*j as u32).to_le_bytes())?;
        write_matrix(b, w)?;
    }
    Ok(())
}

pub fn read_kernel<R: Read>(r: &mut R) -> Result<BlockKernel> {
    expect_header(r, KERNEL_MAGIC)?;
    let d = read_u32(r)? as usize;
    if d == 0 || d > 1 << 16 {
        return Err(Error::Format(format!("implausible dimension {d}")));
    }
    let mut lambda = vec![vec![0.0; d]; d];
    for row in lambda.iter_mut() {
        for x in row.iter_mut() {
            *x = read_f64(r)?;
        }
    }
    let diagonal = (0..d).map(|_| read_matrix(r)).collect::<Result<Vec<_>>>()?;
    let n_cross = read_u32(r)? as usize;
    let mut cross = Vec::with_capacity(n_cross.min(d * d));
    for _ in 0..n_cross {
        let i = read_u32(r)? as usize;
        let j = read_u32(r)? as usize;
        cross.push(((i, j), read_matrix(r)?));
    }
    BlockKernel::from_parts(diagonal, cross, lambda).map_err(|e| Error::Format(e.to_string()))
}
