//! Lookup and trilinear interpolation on a non-uniform lattice, with the
//! analytic backward pass to the input colors, the table values and the
//! sampling coordinates.
//!
//! The lookup is a binary search over each axis' knots. Inputs must lie in
//! `[0, 1]`; the value 1 is placed in the last cell with offset 1.
//!
//! Parallel entry points split the image into fixed pixel blocks. Outputs are
//! written to disjoint slices; gradient contributions are summed into a
//! private buffer per block and blocks are reduced in index order, so the
//! result does not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lattice::{Lattice, CHANNELS};

/// Pixels per work item in the forward pass.
const FORWARD_CHUNK: usize = 4096;

/// Pixels accumulated into one private gradient buffer.
pub const GRAD_BLOCK_PIXELS: usize = 8192;

/// Blocks evaluated concurrently before being folded into the total. Bounds
/// peak memory to this many gradient buffers; has no effect on the result.
const GRAD_WAVE: usize = 16;

/// Upper bound on comparisons for one binary-search lookup on `n_s` knots:
/// `ceil(log2 n_s) + 1`.
pub fn comparison_bound(n_s: usize) -> u32 {
    let mut bits = 0;
    while (1usize << bits) < n_s {
        bits += 1;
    }
    bits + 1
}

/// Largest `s <= n_s - 2` with `row[s] <= x`, plus the number of knot
/// comparisons performed.
#[inline]
fn locate(row: &[f64], x: f64) -> (usize, u32) {
    let mut lo = 0usize;
    let mut hi = row.len() - 2;
    let mut comparisons = 0;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        comparisons += 1;
        if row[mid] <= x {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    (lo, comparisons)
}

fn check_unit(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!("query {x} is outside [0, 1]")));
    }
    Ok(())
}

/// Bracketing knots of `x` along one axis: `(e0, e1, x0, x1)`.
pub fn lookup(row: &[f64], x: f64) -> Result<(usize, usize, f64, f64)> {
    let (cell, _) = lookup_counted(row, x)?;
    Ok((cell.lo, cell.lo + 1, cell.x0, cell.x1))
}

/// [`lookup`] that also reports how many comparisons the search used.
pub fn lookup_counted(row: &[f64], x: f64) -> Result<(AxisCell, u32)> {
    if row.len() < 2 {
        return Err(Error::invalid("coordinate row needs at least two knots"));
    }
    check_unit(x)?;
    let (lo, comparisons) = locate(row, x);
    Ok((AxisCell::new(row, lo, x), comparisons))
}

/// Position of a query inside one axis cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisCell {
    /// Left knot index; the right knot is `lo + 1`.
    pub lo: usize,
    pub x0: f64,
    pub x1: f64,
    /// `(x - x0) / (x1 - x0)`, in `[0, 1]`.
    pub offset: f64,
}

impl AxisCell {
    #[inline]
    fn new(row: &[f64], lo: usize, x: f64) -> Self {
        let x0 = row[lo];
        let x1 = row[lo + 1];
        Self {
            lo,
            x0,
            x1,
            offset: (x - x0) / (x1 - x0),
        }
    }

    pub fn hi(&self) -> usize {
        self.lo + 1
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
}

/// The enclosing lattice cell of a color, one [`AxisCell`] per channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborInfo {
    pub axes: [AxisCell; CHANNELS],
}

impl NeighborInfo {
    pub fn locate(x: [f64; CHANNELS], lattice: &Lattice) -> Result<Self> {
        for &v in &x {
            check_unit(v)?;
        }
        Ok(Self::locate_unchecked(x, lattice))
    }

    #[inline]
    fn locate_unchecked(x: [f64; CHANNELS], lattice: &Lattice) -> Self {
        let coords = lattice.coords();
        let axis = |c: usize| {
            let row = coords.row(c);
            AxisCell::new(row, locate(row, x[c]).0, x[c])
        };
        Self {
            axes: [axis(0), axis(1), axis(2)],
        }
    }

    pub fn offsets(&self) -> [f64; CHANNELS] {
        [self.axes[0].offset, self.axes[1].offset, self.axes[2].offset]
    }
}

/// Corner weights of a unit cell, indexed `4 * i + 2 * j + k` where `i, j, k`
/// select the right neighbor along r, g, b.
#[inline]
pub fn trilinear_weights(xd_r: f64, xd_g: f64, xd_b: f64) -> [f64; 8] {
    let wr = [1.0 - xd_r, xd_r];
    let wg = [1.0 - xd_g, xd_g];
    let wb = [1.0 - xd_b, xd_b];
    let mut out = [0.0; 8];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[4 * i + 2 * j + k] = wr[i] * wg[j] * wb[k];
            }
        }
    }
    out
}

/// Flat table offsets (within one channel) of the 8 cell corners.
#[inline]
fn corner_offsets(cell: &NeighborInfo, n_s: usize) -> [usize; 8] {
    let base = (cell.axes[0].lo * n_s + cell.axes[1].lo) * n_s + cell.axes[2].lo;
    let (di, dj) = (n_s * n_s, n_s);
    let mut out = [0; 8];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[4 * i + 2 * j + k] = base + i * di + j * dj + k;
            }
        }
    }
    out
}

#[inline]
fn eval_unchecked(x: [f64; CHANNELS], lattice: &Lattice) -> [f64; CHANNELS] {
    let n_s = lattice.n_s();
    let cube = n_s * n_s * n_s;
    let cell = NeighborInfo::locate_unchecked(x, lattice);
    let [dr, dg, db] = cell.offsets();
    let weights = trilinear_weights(dr, dg, db);
    let corners = corner_offsets(&cell, n_s);
    let table = lattice.values().as_slice();
    let mut y = [0.0; CHANNELS];
    for (c, yc) in y.iter_mut().enumerate() {
        let plane = &table[c * cube..(c + 1) * cube];
        *yc = weights
            .iter()
            .zip(&corners)
            .map(|(w, &o)| w * plane[o])
            .sum();
    }
    y
}

/// Transforms one color. The result is not clamped.
pub fn transform_pixel(x: [f64; CHANNELS], lattice: &Lattice) -> Result<[f64; CHANNELS]> {
    for &v in &x {
        check_unit(v)?;
    }
    Ok(eval_unchecked(x, lattice))
}

/// Unclamped planar output of the transform, computed in parallel.
pub fn transform_raw(img: &ImageBuffer, lattice: &Lattice) -> Vec<f64> {
    let n = img.pixel_count();
    let mut out = vec![0.0; CHANNELS * n];
    let (r, rest) = out.split_at_mut(n);
    let (g, b) = rest.split_at_mut(n);
    r.par_chunks_mut(FORWARD_CHUNK)
        .zip(g.par_chunks_mut(FORWARD_CHUNK))
        .zip(b.par_chunks_mut(FORWARD_CHUNK))
        .enumerate()
        .for_each(|(chunk, ((r, g), b))| {
            let start = chunk * FORWARD_CHUNK;
            for t in 0..r.len() {
                let y = eval_unchecked(img.pixel(start + t), lattice);
                r[t] = y[0];
                g[t] = y[1];
                b[t] = y[2];
            }
        });
    out
}

/// Applies the lattice to every pixel and clamps the result into `[0, 1]`.
pub fn transform_image(img: &ImageBuffer, lattice: &Lattice) -> ImageBuffer {
    ImageBuffer::from_clamped(img.width(), img.height(), transform_raw(img, lattice))
        .expect("output has the input's shape")
}

/// Single-threaded pixel loop equivalent of [`transform_image`].
pub fn transform_image_sequential(img: &ImageBuffer, lattice: &Lattice) -> ImageBuffer {
    let n = img.pixel_count();
    let mut out = vec![0.0; CHANNELS * n];
    for p in 0..n {
        let y = eval_unchecked(img.pixel(p), lattice);
        for c in 0..CHANNELS {
            out[c * n + p] = y[c];
        }
    }
    ImageBuffer::from_clamped(img.width(), img.height(), out).expect("output has the input's shape")
}

/// Gradients of a scalar loss with respect to the lattice (and optionally the
/// input image).
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGradients {
    /// Same layout as the table, `[channel][i][j][k]`.
    pub values: Vec<f64>,
    /// Same layout as the sampling coordinates, 3 rows of `n_s`.
    pub coords: Vec<f64>,
    /// Planar, same layout as the input image.
    pub input: Option<Vec<f64>>,
}

impl LatticeGradients {
    pub fn zeros(n_s: usize) -> Self {
        Self {
            values: vec![0.0; CHANNELS * n_s * n_s * n_s],
            coords: vec![0.0; CHANNELS * n_s],
            input: None,
        }
    }

    fn add_lattice_terms(&mut self, other: &LatticeGradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        for (a, b) in self.coords.iter_mut().zip(&other.coords) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self.coords.iter().all(|v| v.is_finite())
            && self
                .input
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Gradient contributions of a single pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelGradients {
    pub cell: NeighborInfo,
    /// Trilinear weights of the 8 corners; the gradient on corner `v`,
    /// channel `c` is `weights[v] * grad_out[c]`.
    pub weights: [f64; 8],
    pub grad_out: [f64; CHANNELS],
    /// Gradient on `x0` and `x1` per channel.
    pub coords: [[f64; 2]; CHANNELS],
    pub input: [f64; CHANNELS],
}

impl PixelGradients {
    /// Adds this pixel's table and coordinate terms into `grads`.
    pub fn scatter_into(&self, grads: &mut LatticeGradients, n_s: usize) {
        let cube = n_s * n_s * n_s;
        let corners = corner_offsets(&self.cell, n_s);
        for c in 0..CHANNELS {
            let g = self.grad_out[c];
            if g == 0.0 {
                continue;
            }
            let plane = &mut grads.values[c * cube..(c + 1) * cube];
            for (w, &o) in self.weights.iter().zip(&corners) {
                plane[o] += w * g;
            }
        }
        for c in 0..CHANNELS {
            let lo = self.cell.axes[c].lo;
            grads.coords[c * n_s + lo] += self.coords[c][0];
            grads.coords[c * n_s + lo + 1] += self.coords[c][1];
        }
    }
}

/// Backward pass for one pixel given the upstream gradient `grad_out` on its
/// transformed color.
pub fn backward_pixel(
    x: [f64; CHANNELS],
    lattice: &Lattice,
    grad_out: [f64; CHANNELS],
) -> Result<PixelGradients> {
    for &v in &x {
        check_unit(v)?;
    }
    Ok(backward_unchecked(x, lattice, grad_out))
}

#[inline]
fn backward_unchecked(
    x: [f64; CHANNELS],
    lattice: &Lattice,
    grad_out: [f64; CHANNELS],
) -> PixelGradients {
    let n_s = lattice.n_s();
    let cube = n_s * n_s * n_s;
    let cell = NeighborInfo::locate_unchecked(x, lattice);
    let [dr, dg, db] = cell.offsets();
    let weights = trilinear_weights(dr, dg, db);
    let corners = corner_offsets(&cell, n_s);
    let table = lattice.values().as_slice();

    let wr = [1.0 - dr, dr];
    let wg = [1.0 - dg, dg];
    let wb = [1.0 - db, db];

    // dL/d(offset_c), summed over output channels
    let mut d_offset = [0.0; CHANNELS];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let plane = &table[o * cube..(o + 1) * cube];
        let t = |v: usize| plane[corners[v]];
        let mut along = [0.0; CHANNELS];
        for a in 0..2 {
            for b in 0..2 {
                along[0] += (t(4 + 2 * a + b) - t(2 * a + b)) * wg[a] * wb[b];
                along[1] += (t(4 * a + 2 + b) - t(4 * a + b)) * wr[a] * wb[b];
                along[2] += (t(4 * a + 2 * b + 1) - t(4 * a + 2 * b)) * wr[a] * wg[b];
            }
        }
        for c in 0..CHANNELS {
            d_offset[c] += g * along[c];
        }
    }

    let mut coords = [[0.0; 2]; CHANNELS];
    let mut input = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        let axis = &cell.axes[c];
        let width = axis.width();
        let d = axis.offset;
        coords[c][0] = d_offset[c] * (-(1.0 - d) / width);
        coords[c][1] = d_offset[c] * (-d / width);
        input[c] = d_offset[c] / width;
    }

    PixelGradients {
        cell,
        weights,
        grad_out,
        coords,
        input,
    }
}

fn check_grad_shape(img: &ImageBuffer, grad_out: &[f64]) -> Result<()> {
    let len = CHANNELS * img.pixel_count();
    if grad_out.len() != len {
        return Err(Error::shape(len, grad_out.len()));
    }
    Ok(())
}

struct BlockResult {
    start: usize,
    output: Vec<f64>,
    input: Vec<f64>,
    grads: LatticeGradients,
}

fn process_block(
    img: &ImageBuffer,
    grad_out: &[f64],
    lattice: &Lattice,
    start: usize,
    end: usize,
) -> BlockResult {
    let n = img.pixel_count();
    let n_s = lattice.n_s();
    let len = end - start;
    let mut output = vec![0.0; CHANNELS * len];
    let mut input = vec![0.0; CHANNELS * len];
    let mut grads = LatticeGradients::zeros(n_s);
    for p in start..end {
        let x = img.pixel(p);
        let g = [grad_out[p], grad_out[n + p], grad_out[2 * n + p]];
        let y = eval_unchecked(x, lattice);
        let pg = backward_unchecked(x, lattice, g);
        pg.scatter_into(&mut grads, n_s);
        let t = p - start;
        for c in 0..CHANNELS {
            output[c * len + t] = y[c];
            input[c * len + t] = pg.input[c];
        }
    }
    BlockResult {
        start,
        output,
        input,
        grads,
    }
}

fn fold_block(
    block: BlockResult,
    n: usize,
    output: &mut [f64],
    input: &mut [f64],
    total: &mut LatticeGradients,
) {
    let len = block.output.len() / CHANNELS;
    for c in 0..CHANNELS {
        let dst = c * n + block.start;
        output[dst..dst + len].copy_from_slice(&block.output[c * len..(c + 1) * len]);
        input[dst..dst + len].copy_from_slice(&block.input[c * len..(c + 1) * len]);
    }
    total.add_lattice_terms(&block.grads);
}

fn with_grads_impl(
    img: &ImageBuffer,
    grad_out: &[f64],
    lattice: &Lattice,
    block_pixels: usize,
    parallel: bool,
) -> Result<(Vec<f64>, LatticeGradients)> {
    check_grad_shape(img, grad_out)?;
    if block_pixels == 0 {
        return Err(Error::invalid("gradient block size must be positive"));
    }
    let n = img.pixel_count();
    let bounds: Vec<(usize, usize)> = (0..n.div_ceil(block_pixels))
        .map(|b| (b * block_pixels, ((b + 1) * block_pixels).min(n)))
        .collect();

    let mut output = vec![0.0; CHANNELS * n];
    let mut input = vec![0.0; CHANNELS * n];
    let mut total = LatticeGradients::zeros(lattice.n_s());
    for wave in bounds.chunks(GRAD_WAVE) {
        let blocks: Vec<BlockResult> = if parallel {
            wave.par_iter()
                .map(|&(s, e)| process_block(img, grad_out, lattice, s, e))
                .collect()
        } else {
            wave.iter()
                .map(|&(s, e)| process_block(img, grad_out, lattice, s, e))
                .collect()
        };
        for block in blocks {
            fold_block(block, n, &mut output, &mut input, &mut total);
        }
    }
    total.input = Some(input);
    Ok((output, total))
}

/// Forward pass plus accumulated gradients for a whole image.
///
/// `grad_out` is the upstream gradient on the (unclamped) output, in the
/// image's planar layout. Returns the unclamped output and the gradients,
/// including the per-pixel input gradient.
pub fn transform_with_grads(
    img: &ImageBuffer,
    grad_out: &[f64],
    lattice: &Lattice,
) -> Result<(Vec<f64>, LatticeGradients)> {
    with_grads_impl(img, grad_out, lattice, GRAD_BLOCK_PIXELS, true)
}

/// [`transform_with_grads`] with an explicit block size.
pub fn transform_with_grads_blocked(
    img: &ImageBuffer,
    grad_out: &[f64],
    lattice: &Lattice,
    block_pixels: usize,
) -> Result<(Vec<f64>, LatticeGradients)> {
    with_grads_impl(img, grad_out, lattice, block_pixels, true)
}

/// Single-threaded evaluation of the same block schedule.
pub fn transform_with_grads_sequential(
    img: &ImageBuffer,
    grad_out: &[f64],
    lattice: &Lattice,
    block_pixels: usize,
) -> Result<(Vec<f64>, LatticeGradients)> {
    with_grads_impl(img, grad_out, lattice, block_pixels, false)
}
