//! Reconstruction loss and the two table regularizers.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lattice::{LutTable, CHANNELS};

/// Weights of the regularizers in the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 1e-4,
            lambda_m: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s >= 0.0 && self.lambda_m >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Value of each loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub smoothness: f64,
    pub monotonicity: f64,
}

/// Mean squared error over all `3 * H * W` samples.
pub fn reconstruction_loss(pred: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    pred.same_shape(target)?;
    Ok(mse_with_grad(pred.as_slice(), target.as_slice())?.0)
}

/// MSE and its gradient with respect to `pred`.
pub fn mse_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::shape(target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((sum / n, grad))
}

/// Strides of the three lattice axes within one channel.
fn strides(n: usize) -> [usize; 3] {
    [n * n, n, 1]
}

/// Calls `f(offset)` for every position in one channel whose index along
/// `axis` lies in `lo..hi`.
fn for_each_along(n: usize, axis: usize, lo: usize, hi: usize, mut f: impl FnMut(usize)) {
    let st = strides(n);
    for a in 0..n {
        for b in 0..n {
            for s in lo..hi {
                let idx = match axis {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                };
                f(idx[0] * st[0] + idx[1] * st[1] + idx[2] * st[2]);
            }
        }
    }
}

fn smoothness_count(n: usize) -> usize {
    CHANNELS * 3 * (n - 2) * n * n
}

/// Mean squared second difference of every channel along every axis.
/// Zero for tables affine in the lattice index; zero when `n_s < 3`.
pub fn smoothness_loss(t: &LutTable) -> f64 {
    let n = t.n_s();
    if n < 3 {
        return 0.0;
    }
    let cube = n * n * n;
    let data = t.as_slice();
    let mut sum = 0.0;
    for c in 0..CHANNELS {
        let plane = &data[c * cube..(c + 1) * cube];
        for (axis, &st) in strides(n).iter().enumerate() {
            for_each_along(n, axis, 1, n - 1, |o| {
                let d = plane[o - st] - 2.0 * plane[o] + plane[o + st];
                sum += d * d;
            });
        }
    }
    sum / smoothness_count(n) as f64
}

/// Adds `scale * d(smoothness)/dT` into `grad`.
pub fn smoothness_grad(t: &LutTable, scale: f64, grad: &mut [f64]) {
    let n = t.n_s();
    if n < 3 || scale == 0.0 {
        return;
    }
    let cube = n * n * n;
    let data = t.as_slice();
    let k = 2.0 * scale / smoothness_count(n) as f64;
    for c in 0..CHANNELS {
        let plane = &data[c * cube..(c + 1) * cube];
        let gplane = &mut grad[c * cube..(c + 1) * cube];
        for (axis, &st) in strides(n).iter().enumerate() {
            for_each_along(n, axis, 1, n - 1, |o| {
                let d = plane[o - st] - 2.0 * plane[o] + plane[o + st];
                gplane[o - st] += k * d;
                gplane[o] -= 2.0 * k * d;
                gplane[o + st] += k * d;
            });
        }
    }
}

fn monotonicity_count(n: usize) -> usize {
    CHANNELS * (n - 1) * n * n
}

/// Mean squared hinge on decreasing steps of each channel along its own axis
/// (r along `i`, g along `j`, b along `k`).
pub fn monotonicity_loss(t: &LutTable) -> f64 {
    let n = t.n_s();
    let cube = n * n * n;
    let data = t.as_slice();
    let mut sum = 0.0;
    for c in 0..CHANNELS {
        let plane = &data[c * cube..(c + 1) * cube];
        let st = strides(n)[c];
        for_each_along(n, c, 0, n - 1, |o| {
            let step = plane[o + st] - plane[o];
            if step < 0.0 {
                sum += step * step;
            }
        });
    }
    sum / monotonicity_count(n) as f64
}

/// Adds `scale * d(monotonicity)/dT` into `grad`.
pub fn monotonicity_grad(t: &LutTable, scale: f64, grad: &mut [f64]) {
    if scale == 0.0 {
        return;
    }
    let n = t.n_s();
    let cube = n * n * n;
    let data = t.as_slice();
    let k = 2.0 * scale / monotonicity_count(n) as f64;
    for c in 0..CHANNELS {
        let plane = &data[c * cube..(c + 1) * cube];
        let gplane = &mut grad[c * cube..(c + 1) * cube];
        let st = strides(n)[c];
        for_each_along(n, c, 0, n - 1, |o| {
            let step = plane[o + st] - plane[o];
            if step < 0.0 {
                gplane[o + st] += k * step;
                gplane[o] -= k * step;
            }
        });
    }
}

/// Fraction of own-axis steps that decrease.
pub fn non_monotone_fraction(t: &LutTable) -> f64 {
    let n = t.n_s();
    let cube = n * n * n;
    let data = t.as_slice();
    let mut bad = 0usize;
    for c in 0..CHANNELS {
        let plane = &data[c * cube..(c + 1) * cube];
        let st = strides(n)[c];
        for_each_along(n, c, 0, n - 1, |o| {
            if plane[o + st] < plane[o] {
                bad += 1;
            }
        });
    }
    bad as f64 / monotonicity_count(n) as f64
}

/// `L_r + lambda_s L_s + lambda_m L_m`.
pub fn total_loss(
    pred: &ImageBuffer,
    target: &ImageBuffer,
    t: &LutTable,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let reconstruction = reconstruction_loss(pred, target)?;
    Ok(combine(reconstruction, t, weights))
}

pub(crate) fn combine(reconstruction: f64, t: &LutTable, weights: &LossWeights) -> LossBreakdown {
    let smoothness = smoothness_loss(t);
    let monotonicity = monotonicity_loss(t);
    LossBreakdown {
        total: reconstruction + weights.lambda_s * smoothness + weights.lambda_m * monotonicity,
        reconstruction,
        smoothness,
        monotonicity,
    }
}
