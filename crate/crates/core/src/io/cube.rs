//! Resampling a lattice onto a uniform grid in the `.cube` text layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{uniform_coordinates, Lattice, CHANNELS};
use crate::transform::transform_pixel;

/// Samples `lattice` on an `n`-point uniform grid, red varying fastest.
///
/// Returns `n^3` clamped output triples.
pub fn resample_uniform(lattice: &Lattice, n: usize) -> Result<Vec<[f64; 3]>> {
    if n < 2 {
        return Err(Error::invalid(format!("cube size must be >= 2, got {n}")));
    }
    let grid = uniform_coordinates(n)?;
    let axis = grid.row(0);
    let mut out = Vec::with_capacity(n * n * n);
    for &b in axis {
        for &g in axis {
            for &r in axis {
                let y = transform_pixel([r, g, b], lattice)?;
                out.push(y.map(|v| v.clamp(0.0, 1.0)));
            }
        }
    }
    Ok(out)
}

pub fn encode_cube(lattice: &Lattice, n: usize) -> Result<String> {
    let entries = resample_uniform(lattice, n)?;
    let mut s = format!("LUT_3D_SIZE {n}\n");
    for [r, g, b] in entries {
        writeln!(s, "{r} {g} {b}").expect("string write");
    }
    Ok(s)
}

pub fn export_cube(lattice: &Lattice, n: usize, path: &Path) -> Result<()> {
    let text = encode_cube(lattice, n)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads back the size and entries of a `.cube` file.
///
/// Only the keywords written by [`encode_cube`] plus `TITLE`, `DOMAIN_MIN`,
/// `DOMAIN_MAX` and comments are accepted.
pub fn decode_cube(text: &str) -> Result<(usize, Vec<[f64; 3]>)> {
    let mut size = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Format(format!("line {}: {m}", i + 1));
        let mut fields = line.split_whitespace();
        let first = fields.next().expect("non-empty line");
        match first {
            "LUT_3D_SIZE" => {
                let n: usize = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| err("invalid LUT_3D_SIZE".into()))?;
                size = Some(n);
            }
            "TITLE" | "DOMAIN_MIN" | "DOMAIN_MAX" => {}
            _ => {
                let vals = std::iter::once(first)
                    .chain(fields)
                    .map(|f| f.parse::<f64>().map_err(|_| err(format!("invalid number {f:?}"))))
                    .collect::<Result<Vec<f64>>>()?;
                if vals.len() != CHANNELS {
                    return Err(err(format!("expected 3 values, found {}", vals.len())));
                }
                entries.push([vals[0], vals[1], vals[2]]);
            }
        }
    }
    let n = size.ok_or_else(|| Error::Format("missing LUT_3D_SIZE".into()))?;
    if entries.len() != n * n * n {
        return Err(Error::Format(format!(
            "expected {} entries for size {n}, found {}",
            n * n * n,
            entries.len()
        )));
    }
    Ok((n, entries))
}

pub fn read_cube(path: &Path) -> Result<(usize, Vec<[f64; 3]>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&text)
}
