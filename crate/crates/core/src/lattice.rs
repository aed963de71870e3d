//! Non-uniform 3D lattice construction.
//!
//! A lattice is described by three per-axis coordinate vectors and a table of
//! output colors stored at every vertex of their Cartesian product. The
//! coordinate vectors come from unconstrained interval logits through a
//! row-wise softmax followed by a cumulative sum, which keeps every axis
//! bounded to `[0, 1]` and strictly increasing.
//!
//! The 3D vertex coordinates are never materialized; vertex `(i, j, k)` sits
//! at `(coords_r[i], coords_g[j], coords_b[k])`.

use crate::error::{Error, Result};

/// Number of color channels (r, g, b).
pub const CHANNELS: usize = 3;

/// Smallest normalized interval a row may contain after softmax.
pub const INTERVAL_FLOOR: f64 = 1e-6;

/// Tolerance on the last coordinate of a row being 1.
pub const COORD_END_TOLERANCE: f64 = 1e-9;

fn check_n_s(n_s: usize) -> Result<()> {
    if n_s < 2 {
        return Err(Error::invalid(format!("lattice size must be >= 2, got {n_s}")));
    }
    Ok(())
}

/// Unnormalized interval parameters, 3 rows of `n_s - 1` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalLogits {
    n_s: usize,
    data: Vec<f64>,
}

impl IntervalLogits {
    pub fn new(n_s: usize, data: Vec<f64>) -> Result<Self> {
        check_n_s(n_s)?;
        if data.len() != CHANNELS * (n_s - 1) {
            return Err(Error::shape(CHANNELS * (n_s - 1), data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit at position {pos}")));
        }
        Ok(Self { n_s, data })
    }

    /// Every logit set to `value`; all-ones is the uniform starting state.
    pub fn filled(n_s: usize, value: f64) -> Result<Self> {
        check_n_s(n_s)?;
        Self::new(n_s, vec![value; CHANNELS * (n_s - 1)])
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn row(&self, c: usize) -> &[f64] {
        let w = self.n_s - 1;
        &self.data[c * w..(c + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Softmax-normalized intervals. Each row is positive and sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedIntervals {
    n_s: usize,
    data: Vec<f64>,
}

impl NormalizedIntervals {
    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn row(&self, c: usize) -> &[f64] {
        let w = self.n_s - 1;
        &self.data[c * w..(c + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-axis sampling coordinates, 3 rows of `n_s` knots.
///
/// Each row starts at exactly 0, ends at 1 and is strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingCoordinates {
    n_s: usize,
    data: Vec<f64>,
}

impl SamplingCoordinates {
    pub fn new(n_s: usize, data: Vec<f64>) -> Result<Self> {
        check_n_s(n_s)?;
        if data.len() != CHANNELS * n_s {
            return Err(Error::shape(CHANNELS * n_s, data.len()));
        }
        for c in 0..CHANNELS {
            validate_row(c, &data[c * n_s..(c + 1) * n_s])?;
        }
        Ok(Self { n_s, data })
    }

    pub fn from_rows(rows: [&[f64]; CHANNELS]) -> Result<Self> {
        let n_s = rows[0].len();
        if rows.iter().any(|r| r.len() != n_s) {
            return Err(Error::invalid("coordinate rows differ in length"));
        }
        Self::new(n_s, rows.concat())
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_s..(c + 1) * self.n_s]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// True when all three rows are bit-identical (cube-shaped cells).
    pub fn is_shared(&self) -> bool {
        self.row(0) == self.row(1) && self.row(1) == self.row(2)
    }
}

fn validate_row(c: usize, row: &[f64]) -> Result<()> {
    let name = ["r", "g", "b"][c];
    if let Some(i) = row.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "channel {name}: non-finite coordinate at index {i}"
        )));
    }
    if row[0] != 0.0 {
        return Err(Error::invalid(format!(
            "channel {name}: first coordinate must be 0, got {}",
            row[0]
        )));
    }
    let last = row[row.len() - 1];
    if (last - 1.0).abs() > COORD_END_TOLERANCE {
        return Err(Error::invalid(format!(
            "channel {name}: last coordinate must be 1, got {last}"
        )));
    }
    for i in 1..row.len() {
        if row[i] <= row[i - 1] {
            return Err(Error::invalid(format!(
                "channel {name}: non-monotone at index {i}"
            )));
        }
    }
    Ok(())
}

/// Output color table laid out `[channel][i][j][k]` with `k` (blue) fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct LutTable {
    n_s: usize,
    data: Vec<f64>,
}

impl LutTable {
    pub fn new(n_s: usize, data: Vec<f64>) -> Result<Self> {
        check_n_s(n_s)?;
        let len = CHANNELS * n_s * n_s * n_s;
        if data.len() != len {
            return Err(Error::shape(len, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite table value at position {pos}")));
        }
        Ok(Self { n_s, data })
    }

    pub fn constant(n_s: usize, value: [f64; CHANNELS]) -> Result<Self> {
        check_n_s(n_s)?;
        let cube = n_s * n_s * n_s;
        let data = value
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, cube))
            .collect();
        Self::new(n_s, data)
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    /// Flat offset of entry `(c, i, j, k)`.
    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        ((c * self.n_s + i) * self.n_s + j) * self.n_s + k
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(c, i, j, k)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Sampling coordinates paired with their table of output values.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    coords: SamplingCoordinates,
    values: LutTable,
}

impl Lattice {
    pub fn new(coords: SamplingCoordinates, values: LutTable) -> Result<Self> {
        if coords.n_s() != values.n_s() {
            return Err(Error::invalid(format!(
                "coordinates have {} knots but the table has {}",
                coords.n_s(),
                values.n_s()
            )));
        }
        Ok(Self { coords, values })
    }

    /// Identity transform on uniformly spaced knots.
    pub fn identity(n_s: usize) -> Result<Self> {
        let coords = uniform_coordinates(n_s)?;
        let values = identity_lut(&coords);
        Self::new(coords, values)
    }

    pub fn n_s(&self) -> usize {
        self.coords.n_s()
    }

    pub fn coords(&self) -> &SamplingCoordinates {
        &self.coords
    }

    pub fn values(&self) -> &LutTable {
        &self.values
    }

    pub fn into_parts(self) -> (SamplingCoordinates, LutTable) {
        (self.coords, self.values)
    }
}

/// Row-wise softmax with the interval floor applied.
///
/// Entries that fall below [`INTERVAL_FLOOR`] are raised to it and the row is
/// renormalized.
pub fn softmax_normalize(logits: &IntervalLogits) -> Result<NormalizedIntervals> {
    if let Some(pos) = logits.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit at position {pos}")));
    }
    let w = logits.n_s - 1;
    let mut data = Vec::with_capacity(logits.data.len());
    for c in 0..CHANNELS {
        let row = raw_softmax(logits.row(c));
        let floored: Vec<f64> = row.iter().map(|&s| s.max(INTERVAL_FLOOR)).collect();
        if floored == row {
            data.extend(row);
        } else {
            let total: f64 = floored.iter().sum();
            data.extend(floored.iter().map(|v| v / total));
        }
        debug_assert_eq!(data.len(), (c + 1) * w);
    }
    Ok(NormalizedIntervals {
        n_s: logits.n_s,
        data,
    })
}

fn raw_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Prepends the origin and takes the running sum of each row. The last knot
/// is pinned to exactly 1.
pub fn intervals_to_coordinates(q: &NormalizedIntervals) -> SamplingCoordinates {
    let n_s = q.n_s;
    let mut data = Vec::with_capacity(CHANNELS * n_s);
    for c in 0..CHANNELS {
        data.push(0.0);
        let mut acc = 0.0;
        for &step in &q.row(c)[..n_s - 2] {
            acc += step;
            data.push(acc);
        }
        data.push(1.0);
    }
    SamplingCoordinates { n_s, data }
}

/// Logits to coordinates in one call.
pub fn coordinates_from_logits(logits: &IntervalLogits) -> Result<SamplingCoordinates> {
    Ok(intervals_to_coordinates(&softmax_normalize(logits)?))
}

/// Equally spaced knots `i / (n_s - 1)` on every axis.
pub fn uniform_coordinates(n_s: usize) -> Result<SamplingCoordinates> {
    check_n_s(n_s)?;
    let step = (n_s - 1) as f64;
    let row: Vec<f64> = (0..n_s).map(|i| i as f64 / step).collect();
    Ok(SamplingCoordinates {
        n_s,
        data: row.repeat(CHANNELS),
    })
}

/// Table whose vertex values equal the vertex coordinates.
pub fn identity_lut(coords: &SamplingCoordinates) -> LutTable {
    let n = coords.n_s();
    let (r, g, b) = (coords.row(0), coords.row(1), coords.row(2));
    let mut data = Vec::with_capacity(CHANNELS * n * n * n);
    for c in 0..CHANNELS {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    data.push(match c {
                        0 => r[i],
                        1 => g[j],
                        _ => b[k],
                    });
                }
            }
        }
    }
    LutTable { n_s: n, data }
}

/// Replicates one interval row to all three axes.
pub fn shared_to_full(shared_row: &[f64]) -> Result<IntervalLogits> {
    IntervalLogits::new(shared_row.len() + 1, shared_row.repeat(CHANNELS))
}

/// Pulls a gradient on the coordinates back to the logits that produced them.
///
/// Mirrors [`softmax_normalize`] followed by [`intervals_to_coordinates`]:
/// the first and the pinned last knot are constants, the cumulative sum
/// transposes into a suffix sum, and the floor/renormalize and softmax
/// Jacobians are applied row by row.
pub fn coordinates_vjp(logits: &IntervalLogits, grad_coords: &[f64]) -> Result<Vec<f64>> {
    let n_s = logits.n_s;
    if grad_coords.len() != CHANNELS * n_s {
        return Err(Error::shape(CHANNELS * n_s, grad_coords.len()));
    }
    let w = n_s - 1;
    let mut out = Vec::with_capacity(CHANNELS * w);
    for c in 0..CHANNELS {
        let gp = &grad_coords[c * n_s..(c + 1) * n_s];
        // coordinate s (1..=n_s-2) depends on intervals 0..s
        let mut dq = vec![0.0; w];
        let mut acc = 0.0;
        for j in (0..w).rev() {
            if j + 1 <= n_s - 2 {
                acc += gp[j + 1];
            }
            dq[j] = acc;
        }

        let s = raw_softmax(logits.row(c));
        let floored: Vec<f64> = s.iter().map(|&v| v.max(INTERVAL_FLOOR)).collect();
        let ds: Vec<f64> = if floored == s {
            dq
        } else {
            let total: f64 = floored.iter().sum();
            let q: Vec<f64> = floored.iter().map(|v| v / total).collect();
            let dot: f64 = dq.iter().zip(&q).map(|(a, b)| a * b).sum();
            dq.iter()
                .zip(&s)
                .map(|(&g, &sv)| {
                    if sv >= INTERVAL_FLOOR {
                        (g - dot) / total
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let dot: f64 = ds.iter().zip(&s).map(|(a, b)| a * b).sum();
        out.extend(s.iter().zip(&ds).map(|(&sv, &g)| sv * (g - dot)));
    }
    Ok(out)
}

/// Sums the three row gradients of a replicated logit row.
pub fn shared_vjp(full_grad: &[f64]) -> Vec<f64> {
    let w = full_grad.len() / CHANNELS;
    (0..w)
        .map(|j| full_grad[j] + full_grad[w + j] + full_grad[2 * w + j])
        .collect()
}
