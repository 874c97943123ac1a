//! JEQF binary field dumps and CSV export.
//!
//! Layout: a 32-byte header followed by little-endian f64 values.
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `JEQF`                              |
//! | 4..8   | format version (u32)                      |
//! | 8..12  | complex dimension n (u32)                 |
//! | 12..16 | points per real axis N (u32)              |
//! | 16..20 | kind tag (u32): 0 potential, 1 hermitian  |
//! | 20..24 | reserved, zero                            |
//! | 24..32 | common period (f64), 0 when periods differ|
//!
//! Potential fields store one value per point. Hermitian fields store the n×n
//! entries per point row-major as (re, im) pairs. Points follow the grid's
//! flat index order.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::grid::{Grid, HermitianField, PotentialField};
use super::mat::Mat;
use crate::error::{JeqError, Result};

pub const MAGIC: &[u8; 4] = b"JEQF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum FieldKind {
    Potential = 0,
    Hermitian = 1,
}

/// A field read back from a JEQF stream.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Potential(PotentialField),
    Hermitian(HermitianField),
}

fn header(grid: &Grid, kind: FieldKind) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&VERSION.to_le_bytes());
    h[8..12].copy_from_slice(&(grid.complex_dim() as u32).to_le_bytes());
    h[12..16].copy_from_slice(&(grid.points_per_axis() as u32).to_le_bytes());
    h[16..20].copy_from_slice(&(kind as u32).to_le_bytes());
    let p = grid.periods();
    let common = if p.iter().all(|&x| x == p[0]) {
        p[0]
    } else {
        0.0
    };
    h[24..32].copy_from_slice(&common.to_le_bytes());
    h
}

pub fn write_potential<W: Write>(mut w: W, f: &PotentialField) -> Result<()> {
    w.write_all(&header(&f.grid, FieldKind::Potential))?;
    let mut buf = Vec::with_capacity(f.values.len() * 8);
    for v in &f.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_hermitian<W: Write>(mut w: W, f: &HermitianField) -> Result<()> {
    w.write_all(&header(&f.grid, FieldKind::Hermitian))?;
    let n = f.grid.complex_dim();
    let mut buf = Vec::with_capacity(f.values.len() * n * n * 16);
    for m in &f.values {
        for i in 0..n {
            for j in 0..n {
                let z = m.get(i, j);
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn read_field<R: Read>(mut r: R) -> Result<Field> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    if &h[0..4] != MAGIC {
        return Err(JeqError::InvalidInput("not a JEQF stream".into()));
    }
    let version = u32_at(&h, 4);
    if version != VERSION {
        return Err(JeqError::InvalidInput(format!(
            "unsupported JEQF version {version}"
        )));
    }
    let n = u32_at(&h, 8) as usize;
    let points = u32_at(&h, 12) as usize;
    let kind = u32_at(&h, 16);
    let period = f64::from_le_bytes(h[24..32].try_into().unwrap());
    let grid = if period > 0.0 {
        Grid::with_periods(n, points, vec![period; 2 * n])?
    } else {
        Grid::new(n, points)?
    };
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    match kind {
        0 => Ok(Field::Potential(PotentialField::new(grid, vals)?)),
        1 => {
            let per = 2 * n * n;
            if vals.len() != per * grid.len() {
                return Err(JeqError::InvalidInput("truncated hermitian field".into()));
            }
            let values = vals
                .chunks_exact(per)
                .map(|c| {
                    let e: Vec<Complex64> = c
                        .chunks_exact(2)
                        .map(|p| Complex64::new(p[0], p[1]))
                        .collect();
                    Mat::from_rows(n, &e)
                })
                .collect();
            Ok(Field::Hermitian(HermitianField::new(grid, values)?))
        }
        k => Err(JeqError::InvalidInput(format!("unknown field kind {k}"))),
    }
}

pub fn save_potential(path: &Path, f: &PotentialField) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_potential(std::io::BufWriter::new(file), f)
}

pub fn load_field(path: &Path) -> Result<Field> {
    let file = std::fs::File::open(path)?;
    read_field(std::io::BufReader::new(file))
}

/// Formats a float so that it parses back to the same value, using '.' as the
/// decimal separator and scientific notation only for very large or small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// CSV writer with LF line endings.
pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn index_header(grid: &Grid) -> Vec<String> {
    (0..grid.real_dim()).map(|a| format!("i{a}")).collect()
}

pub fn write_potential_csv<W: Write>(w: W, f: &PotentialField) -> Result<()> {
    let mut wr = csv_writer(w);
    let mut head = index_header(&f.grid);
    head.push("value".into());
    wr.write_record(&head)
        .map_err(|e| JeqError::Io(e.to_string()))?;
    for (i, v) in f.values.iter().enumerate() {
        let mut row: Vec<String> = f
            .grid
            .multi_index(i)
            .iter()
            .map(|k| k.to_string())
            .collect();
        row.push(fmt_f64(*v));
        wr.write_record(&row)
            .map_err(|e| JeqError::Io(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_hermitian_csv<W: Write>(w: W, f: &HermitianField) -> Result<()> {
    let n = f.grid.complex_dim();
    let mut wr = csv_writer(w);
    let mut head = index_header(&f.grid);
    for i in 0..n {
        for j in 0..n {
            head.push(format!("g{i}{j}_re"));
            head.push(format!("g{i}{j}_im"));
        }
    }
    wr.write_record(&head)
        .map_err(|e| JeqError::Io(e.to_string()))?;
    for (k, m) in f.values.iter().enumerate() {
        let mut row: Vec<String> = f
            .grid
            .multi_index(k)
            .iter()
            .map(|x| x.to_string())
            .collect();
        for i in 0..n {
            for j in 0..n {
                row.push(fmt_f64(m.get(i, j).re));
                row.push(fmt_f64(m.get(i, j).im));
            }
        }
        wr.write_record(&row)
            .map_err(|e| JeqError::Io(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
