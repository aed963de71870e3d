//! Image-adaptive lattice prediction.
//!
//! Fixed color statistics stand in for a learned backbone. Three affine heads
//! consume them: an interval head producing the interval logits, a weight
//! head producing `m` blend weights, and a basis head whose weight rows are
//! the `m` basis tables being blended.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lattice::{
    coordinates_from_logits, coordinates_vjp, identity_lut, shared_to_full, shared_vjp,
    uniform_coordinates, IntervalLogits, Lattice, LutTable, SamplingCoordinates, CHANNELS,
};

/// Histogram bins per channel in the feature vector.
pub const HIST_BINS: usize = 32;

/// Length of [`extract_features`] output: three histograms plus per-channel
/// mean and standard deviation.
pub const FEATURE_DIM: usize = CHANNELS * HIST_BINS + 2 * CHANNELS;

/// Spread of the random basis tables at initialization.
const BASIS_INIT_STD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature at {pos}")));
        }
        Ok(Self(data))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Layout: `hist_r[32] hist_g[32] hist_b[32] mean_r mean_g mean_b std_r std_g std_b`.
pub fn extract_features(img: &ImageBuffer) -> FeatureVector {
    let n = img.pixel_count() as f64;
    let mut out = vec![0.0; FEATURE_DIM];
    let mut means = [0.0; CHANNELS];
    let mut stds = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        let plane = img.plane(c);
        let hist = &mut out[c * HIST_BINS..(c + 1) * HIST_BINS];
        for &v in plane {
            let bin = ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            hist[bin] += 1.0;
        }
        for h in hist.iter_mut() {
            *h /= n;
        }
        let mean = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means[c] = mean;
        stds[c] = var.sqrt();
    }
    let tail = CHANNELS * HIST_BINS;
    out[tail..tail + CHANNELS].copy_from_slice(&means);
    out[tail + CHANNELS..].copy_from_slice(&stds);
    FeatureVector(out)
}

/// Affine map `y = x W + b` with `W` stored row-major as `in_dim x out_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::shape(in_dim * out_dim, weights.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::shape(out_dim, bias.len()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::shape(self.in_dim, x.len()));
        }
        let mut y = self.bias.clone();
        for (row, &xi) in self.weights.chunks_exact(self.out_dim).zip(x) {
            if xi == 0.0 {
                continue;
            }
            for (yo, w) in y.iter_mut().zip(row) {
                *yo += xi * w;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient on `x`.
    fn backward(&self, x: &[f64], grad_y: &[f64], grad: &mut Dense) -> Vec<f64> {
        for (b, g) in grad.bias.iter_mut().zip(grad_y) {
            *b += g;
        }
        let mut grad_x = vec![0.0; self.in_dim];
        for (i, (row, grow)) in self
            .weights
            .chunks_exact(self.out_dim)
            .zip(grad.weights.chunks_exact_mut(self.out_dim))
            .enumerate()
        {
            let xi = x[i];
            let mut acc = 0.0;
            for ((w, gw), g) in row.iter().zip(grow.iter_mut()).zip(grad_y) {
                *gw += xi * g;
                acc += w * g;
            }
            grad_x[i] = acc;
        }
        grad_x
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn zeroed_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim)
    }

    fn add_scaled(&mut self, other: &Dense, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }
}

/// Parameters of the three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub n_s: usize,
    pub m: usize,
    /// features -> interval logits (`n_s - 1` outputs when shared, else `3 (n_s - 1)`)
    pub intervals: Dense,
    /// features -> `m` blend weights
    pub blend: Dense,
    /// blend weights -> flattened table; row `b` of the weights is basis table `b`
    pub basis: Dense,
}

impl PredictorParams {
    pub fn new(n_s: usize, m: usize, intervals: Dense, blend: Dense, basis: Dense) -> Result<Self> {
        if n_s < 2 || m == 0 {
            return Err(Error::invalid(format!("invalid predictor sizes n_s={n_s} m={m}")));
        }
        let f = intervals.in_dim;
        let w = n_s - 1;
        if intervals.out_dim != w && intervals.out_dim != CHANNELS * w {
            return Err(Error::shape(CHANNELS * w, intervals.out_dim));
        }
        if blend.in_dim != f || blend.out_dim != m {
            return Err(Error::shape(
                format!("{f}x{m}"),
                format!("{}x{}", blend.in_dim, blend.out_dim),
            ));
        }
        let table_len = CHANNELS * n_s * n_s * n_s;
        if basis.in_dim != m || basis.out_dim != table_len {
            return Err(Error::shape(
                format!("{m}x{table_len}"),
                format!("{}x{}", basis.in_dim, basis.out_dim),
            ));
        }
        let all_finite = [&intervals, &blend, &basis]
            .iter()
            .all(|d| d.weights.iter().chain(&d.bias).all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::invalid("non-finite predictor parameter"));
        }
        Ok(Self {
            n_s,
            m,
            intervals,
            blend,
            basis,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.intervals.in_dim
    }

    pub fn shared(&self) -> bool {
        self.intervals.out_dim == self.n_s - 1
    }

    pub fn zeroed_like(&self) -> Self {
        Self {
            n_s: self.n_s,
            m: self.m,
            intervals: self.intervals.zeroed_like(),
            blend: self.blend.zeroed_like(),
            basis: self.basis.zeroed_like(),
        }
    }

    pub fn add_scaled(&mut self, other: &PredictorParams, scale: f64) {
        self.intervals.add_scaled(&other.intervals, scale);
        self.blend.add_scaled(&other.blend, scale);
        self.basis.add_scaled(&other.basis, scale);
    }
}

/// Initial state: interval head zero weights and unit bias (uniform
/// intervals), blend head selecting basis 0, basis 0 the identity table and
/// the remaining bases small Gaussian noise.
pub fn init_params(n_s: usize, m: usize, f_dim: usize, shared: bool, seed: u64) -> Result<PredictorParams> {
    if n_s < 2 || m == 0 || f_dim == 0 {
        return Err(Error::invalid(format!(
            "invalid predictor sizes n_s={n_s} m={m} f_dim={f_dim}"
        )));
    }
    let rows = if shared { 1 } else { CHANNELS };
    let k = rows * (n_s - 1);
    let intervals = Dense::new(f_dim, k, vec![0.0; f_dim * k], vec![1.0; k])?;

    let mut blend_bias = vec![0.0; m];
    blend_bias[0] = 1.0;
    let blend = Dense::new(f_dim, m, vec![0.0; f_dim * m], blend_bias)?;

    let identity = identity_lut(&uniform_coordinates(n_s)?).into_vec();
    let table_len = identity.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, BASIS_INIT_STD).expect("valid std");
    let mut weights = identity;
    weights.reserve(table_len * (m - 1));
    for _ in 1..m {
        weights.extend((0..table_len).map(|_| noise.sample(&mut rng)));
    }
    let basis = Dense::new(m, table_len, weights, vec![0.0; table_len])?;
    PredictorParams::new(n_s, m, intervals, blend, basis)
}

/// Interval logits for a feature vector. `shared` must match the interval
/// head's layout.
pub fn predict_logits(e: &FeatureVector, params: &PredictorParams, shared: bool) -> Result<IntervalLogits> {
    if shared != params.shared() {
        return Err(Error::shape(
            if shared { params.n_s - 1 } else { CHANNELS * (params.n_s - 1) },
            params.intervals.out_dim,
        ));
    }
    let raw = params.intervals.forward(e.as_slice())?;
    if shared {
        shared_to_full(&raw)
    } else {
        IntervalLogits::new(params.n_s, raw)
    }
}

/// Blends the basis tables with image-dependent weights.
pub fn predict_values(e: &FeatureVector, params: &PredictorParams) -> Result<LutTable> {
    let w = params.blend.forward(e.as_slice())?;
    LutTable::new(params.n_s, params.basis.forward(&w)?)
}

/// Intermediate values of one predictor evaluation, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PredictorForward {
    pub features: FeatureVector,
    pub logits: IntervalLogits,
    pub coords: SamplingCoordinates,
    pub blend_weights: Vec<f64>,
    pub lattice: Lattice,
}

pub fn predict(img: &ImageBuffer, params: &PredictorParams) -> Result<PredictorForward> {
    let features = extract_features(img);
    if features.len() != params.feature_dim() {
        return Err(Error::shape(params.feature_dim(), features.len()));
    }
    let logits = predict_logits(&features, params, params.shared())?;
    let coords = coordinates_from_logits(&logits)?;
    let blend_weights = params.blend.forward(features.as_slice())?;
    let values = LutTable::new(params.n_s, params.basis.forward(&blend_weights)?)?;
    let lattice = Lattice::new(coords.clone(), values)?;
    Ok(PredictorForward {
        features,
        logits,
        coords,
        blend_weights,
        lattice,
    })
}

/// Predicts the lattice for an image.
pub fn predict_lattice(img: &ImageBuffer, params: &PredictorParams) -> Result<Lattice> {
    Ok(predict(img, params)?.lattice)
}

/// Accumulates parameter gradients given gradients on the predicted
/// coordinates and table values.
pub fn backward(
    params: &PredictorParams,
    fwd: &PredictorForward,
    grad_coords: &[f64],
    grad_values: &[f64],
    grads: &mut PredictorParams,
) -> Result<()> {
    let e = fwd.features.as_slice();
    let full = coordinates_vjp(&fwd.logits, grad_coords)?;
    let grad_logits = if params.shared() { shared_vjp(&full) } else { full };
    params.intervals.backward(e, &grad_logits, &mut grads.intervals);

    if grad_values.len() != params.basis.out_dim {
        return Err(Error::shape(params.basis.out_dim, grad_values.len()));
    }
    let grad_w = params
        .basis
        .backward(&fwd.blend_weights, grad_values, &mut grads.basis);
    params.blend.backward(e, &grad_w, &mut grads.blend);
    Ok(())
}
