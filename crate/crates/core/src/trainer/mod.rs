//! Gradient-based fitting of lattices and predictors.
//!
//! Two regimes are supported. [`fit_direct`] optimizes the interval logits and
//! the table of a single lattice. [`train_predictor`] optimizes the predictor
//! heads end to end through the transform. In both, the interval parameters
//! are frozen for the first `freeze_interval_epochs` epochs and afterwards
//! train at `learning_rate * interval_lr_decay`.

mod adam;
mod loss;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    monotonicity_grad, monotonicity_loss, mse_with_grad, non_monotone_fraction,
    reconstruction_loss, smoothness_grad, smoothness_loss, total_loss, LossBreakdown, LossWeights,
};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lattice::{
    coordinates_from_logits, coordinates_vjp, identity_lut, shared_to_full, shared_vjp,
    uniform_coordinates, IntervalLogits, Lattice, LutTable, CHANNELS,
};
use crate::predictor::{self, init_params, PredictorParams, FEATURE_DIM};
use crate::transform::{transform_raw, transform_with_grads};

/// Loss may grow to this multiple of its first value before training aborts.
const DIVERGENCE_FACTOR: f64 = 1e3;

/// Lower bound on the reference loss of the divergence guard, so a run that
/// starts at (or near) zero loss is not aborted by rounding noise.
const DIVERGENCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub freeze_interval_epochs: usize,
    pub interval_lr_decay: f64,
    /// Pairs per optimizer step in [`train_predictor`].
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 400,
            freeze_interval_epochs: 5,
            interval_lr_decay: 0.1,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.freeze_interval_epochs > self.epochs {
            return Err(Error::invalid(format!(
                "freeze_interval_epochs ({}) exceeds epochs ({})",
                self.freeze_interval_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.interval_lr_decay >= 0.0) {
            return Err(Error::invalid("interval learning-rate decay must be non-negative"));
        }
        Ok(())
    }

    fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Interval learning rate for `epoch`, `None` while frozen.
    fn interval_lr(&self, epoch: usize) -> Option<f64> {
        (epoch >= self.freeze_interval_epochs)
            .then(|| self.learning_rate * self.interval_lr_decay)
    }
}

/// An input image and its desired output.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub input: ImageBuffer,
    pub target: ImageBuffer,
}

impl ImagePair {
    pub fn new(input: ImageBuffer, target: ImageBuffer) -> Result<Self> {
        input.same_shape(&target)?;
        Ok(Self { input, target })
    }
}

/// How the sampling coordinates of a directly fitted lattice are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntervalMode {
    /// Knots stay uniform for the whole run.
    Uniform,
    /// One interval row per axis.
    Adaptive,
    /// A single interval row replicated to all three axes.
    Shared,
}

/// One row of a loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

/// Writes `step,loss,l_r,l_s,l_m` rows.
pub fn write_history_csv<W: Write>(out: &mut W, history: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "step,loss,l_r,l_s,l_m")?;
    for r in history {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e}",
            r.step, r.loss.total, r.loss.reconstruction, r.loss.smoothness, r.loss.monotonicity
        )?;
    }
    Ok(())
}

pub fn save_history_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history_csv(&mut file, history).map_err(|e| Error::io(path, e))
}

struct DivergenceGuard {
    reference: Option<f64>,
}

impl DivergenceGuard {
    fn check(&mut self, epoch: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        let reference = *self.reference.get_or_insert(loss.max(DIVERGENCE_FLOOR));
        if loss > DIVERGENCE_FACTOR * reference {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        Ok(())
    }
}

fn at_epoch<T>(epoch: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::TrainingDiverged { loss, .. } => Error::TrainingDiverged { epoch, loss },
        other => other,
    })
}

/// Loss, value gradient (including regularizers) and coordinate gradient of
/// one pair under `lattice`.
fn pair_gradients(
    pair: &ImagePair,
    lattice: &Lattice,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    let pred = transform_raw(&pair.input, lattice);
    let (l_r, grad_out) = mse_with_grad(&pred, pair.target.as_slice())?;
    let (_, mut grads) = transform_with_grads(&pair.input, &grad_out, lattice)?;
    let table = lattice.values();
    smoothness_grad(table, weights.lambda_s, &mut grads.values);
    monotonicity_grad(table, weights.lambda_m, &mut grads.values);
    Ok((loss::combine(l_r, table, weights), grads.values, grads.coords))
}

/// Result of [`fit_direct`].
#[derive(Clone, Debug)]
pub struct FitResult {
    pub lattice: Lattice,
    /// Full-size logits (replicated rows in shared mode).
    pub logits: IntervalLogits,
    pub history: Vec<LossRecord>,
}

/// Fits the interval logits and table of one lattice to `pairs`.
///
/// Starts from uniform knots and the identity table. Each epoch visits the
/// pairs in order with one optimizer step per pair; one history row is
/// recorded per step with the loss before the update.
pub fn fit_direct(
    pairs: &[ImagePair],
    n_s: usize,
    config: &TrainConfig,
    weights: &LossWeights,
    mode: IntervalMode,
) -> Result<FitResult> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    config.validate()?;
    weights.validate()?;

    let rows = if mode == IntervalMode::Shared { 1 } else { CHANNELS };
    let mut logits = vec![1.0; rows * (n_s.max(2) - 1)];
    let mut table = identity_lut(&uniform_coordinates(n_s)?).into_vec();
    let mut value_state = AdamState::new(table.len());
    let mut logit_state = AdamState::new(logits.len());
    let value_adam = config.adam(config.learning_rate);

    let full_logits = |l: &[f64]| -> Result<IntervalLogits> {
        match mode {
            IntervalMode::Shared => shared_to_full(l),
            _ => IntervalLogits::new(n_s, l.to_vec()),
        }
    };

    let mut guard = DivergenceGuard { reference: None };
    let mut history = Vec::with_capacity(config.epochs * pairs.len());
    let mut step = 0;
    for epoch in 0..config.epochs {
        for pair in pairs {
            let full = full_logits(&logits)?;
            let coords = match mode {
                IntervalMode::Uniform => uniform_coordinates(n_s)?,
                _ => coordinates_from_logits(&full)?,
            };
            let lattice = Lattice::new(coords, LutTable::new(n_s, table.clone())?)?;
            let (loss, grad_values, grad_coords) = pair_gradients(pair, &lattice, weights)?;
            guard.check(epoch, loss.total)?;
            history.push(LossRecord { step, loss });

            at_epoch(
                epoch,
                adam_step(&mut table, &grad_values, &mut value_state, &value_adam),
            )?;
            if mode != IntervalMode::Uniform {
                if let Some(lr) = config.interval_lr(epoch) {
                    let g = coordinates_vjp(&full, &grad_coords)?;
                    let g = if mode == IntervalMode::Shared { shared_vjp(&g) } else { g };
                    at_epoch(
                        epoch,
                        adam_step(&mut logits, &g, &mut logit_state, &config.adam(lr)),
                    )?;
                }
            }
            step += 1;
        }
    }

    let full = full_logits(&logits)?;
    let coords = match mode {
        IntervalMode::Uniform => uniform_coordinates(n_s)?,
        _ => coordinates_from_logits(&full)?,
    };
    let lattice = Lattice::new(coords, LutTable::new(n_s, table)?)?;
    Ok(FitResult {
        lattice,
        logits: full,
        history,
    })
}

/// Result of [`train_predictor`].
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: PredictorParams,
    /// One row per epoch holding the mean loss terms over all pairs.
    pub history: Vec<LossRecord>,
}

struct DenseStates {
    weights: AdamState,
    bias: AdamState,
}

impl DenseStates {
    fn new(d: &predictor::Dense) -> Self {
        Self {
            weights: AdamState::new(d.weights.len()),
            bias: AdamState::new(d.bias.len()),
        }
    }

    fn step(&mut self, p: &mut predictor::Dense, g: &predictor::Dense, cfg: &AdamConfig) -> Result<()> {
        adam_step(&mut p.weights, &g.weights, &mut self.weights, cfg)?;
        adam_step(&mut p.bias, &g.bias, &mut self.bias, cfg)
    }
}

/// Trains the predictor heads end to end on `pairs`.
///
/// Pairs are shuffled each epoch with a generator seeded from `config.seed`;
/// gradients are averaged over `config.batch_size` pairs per step.
pub fn train_predictor(
    pairs: &[ImagePair],
    n_s: usize,
    m: usize,
    config: &TrainConfig,
    weights: &LossWeights,
    shared: bool,
) -> Result<TrainResult> {
    let params = init_params(n_s, m, FEATURE_DIM, shared, config.seed)?;
    train_predictor_from(pairs, params, config, weights)
}

/// [`train_predictor`] starting from given parameters.
pub fn train_predictor_from(
    pairs: &[ImagePair],
    mut params: PredictorParams,
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainResult> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    config.validate()?;
    weights.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut interval_states = DenseStates::new(&params.intervals);
    let mut blend_states = DenseStates::new(&params.blend);
    let mut basis_states = DenseStates::new(&params.basis);
    let head_adam = config.adam(config.learning_rate);

    let mut guard = DivergenceGuard { reference: None };
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zeroed_like();
            for &idx in batch {
                let fwd = predictor::predict(&pairs[idx].input, &params)?;
                let (loss, grad_values, grad_coords) =
                    pair_gradients(&pairs[idx], &fwd.lattice, weights)?;
                guard.check(epoch, loss.total)?;
                epoch_loss.total += loss.total;
                epoch_loss.reconstruction += loss.reconstruction;
                epoch_loss.smoothness += loss.smoothness;
                epoch_loss.monotonicity += loss.monotonicity;
                predictor::backward(&params, &fwd, &grad_coords, &grad_values, &mut grads)?;
            }
            let mut mean = params.zeroed_like();
            mean.add_scaled(&grads, 1.0 / batch.len() as f64);

            at_epoch(epoch, blend_states.step(&mut params.blend, &mean.blend, &head_adam))?;
            at_epoch(epoch, basis_states.step(&mut params.basis, &mean.basis, &head_adam))?;
            if let Some(lr) = config.interval_lr(epoch) {
                at_epoch(
                    epoch,
                    interval_states.step(&mut params.intervals, &mean.intervals, &config.adam(lr)),
                )?;
            }
        }
        let n = pairs.len() as f64;
        history.push(LossRecord {
            step: epoch,
            loss: LossBreakdown {
                total: epoch_loss.total / n,
                reconstruction: epoch_loss.reconstruction / n,
                smoothness: epoch_loss.smoothness / n,
                monotonicity: epoch_loss.monotonicity / n,
            },
        });
    }
    Ok(TrainResult { params, history })
}

/// Loss of `params` on one pair, without gradients.
pub fn predictor_loss(pair: &ImagePair, params: &PredictorParams, weights: &LossWeights) -> Result<LossBreakdown> {
    let lattice = predictor::predict_lattice(&pair.input, params)?;
    let pred = transform_raw(&pair.input, &lattice);
    let (l_r, _) = mse_with_grad(&pred, pair.target.as_slice())?;
    Ok(loss::combine(l_r, lattice.values(), weights))
}

/// Loss of a fixed lattice on one pair, without gradients.
pub fn lattice_loss(pair: &ImagePair, lattice: &Lattice, weights: &LossWeights) -> Result<LossBreakdown> {
    let pred = transform_raw(&pair.input, lattice);
    let (l_r, _) = mse_with_grad(&pred, pair.target.as_slice())?;
    Ok(loss::combine(l_r, lattice.values(), weights))
}

/// Gradient of the total loss on one pair with respect to every predictor
/// parameter.
pub fn predictor_gradients(
    pair: &ImagePair,
    params: &PredictorParams,
    weights: &LossWeights,
) -> Result<(LossBreakdown, PredictorParams)> {
    let fwd = predictor::predict(&pair.input, params)?;
    let (loss, grad_values, grad_coords) = pair_gradients(pair, &fwd.lattice, weights)?;
    let mut grads = params.zeroed_like();
    predictor::backward(params, &fwd, &grad_coords, &grad_values, &mut grads)?;
    Ok((loss, grads))
}

/// Gradient of the total loss on one pair with respect to the interval logits
/// and table of a lattice.
pub fn lattice_gradients(
    pair: &ImagePair,
    logits: &IntervalLogits,
    table: &LutTable,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    let lattice = Lattice::new(coordinates_from_logits(logits)?, table.clone())?;
    let (loss, grad_values, grad_coords) = pair_gradients(pair, &lattice, weights)?;
    Ok((loss, coordinates_vjp(logits, &grad_coords)?, grad_values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_pair(w: usize, h: usize, gamma: f64) -> ImagePair {
        let n = w * h;
        let mut px = Vec::with_capacity(3 * n);
        for p in 0..n {
            for c in 0..3 {
                px.push(((p * 7 + c * 13) % n) as f64 / (n - 1) as f64);
            }
        }
        let input = ImageBuffer::from_interleaved(w, h, &px).unwrap();
        let target = ImageBuffer::new(
            w,
            h,
            input.as_slice().iter().map(|v| v.powf(gamma)).collect(),
        )
        .unwrap();
        ImagePair::new(input, target).unwrap()
    }

    #[test]
    fn identity_task_stays_identity() {
        let pair = ramp_pair(8, 8, 1.0);
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let fit = fit_direct(&[pair], 4, &cfg, &LossWeights::default(), IntervalMode::Adaptive).unwrap();
        assert!(fit.history[0].loss.total < 1e-20);
        // Adam turns rounding-level gradients into steps of order the learning
        // rate, so the table only stays near the identity
        let worst = fit.history.iter().map(|r| r.loss.total).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
        let id = identity_lut(&uniform_coordinates(4).unwrap());
        for (a, b) in fit.lattice.values().as_slice().iter().zip(id.as_slice()) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn fitting_reduces_loss() {
        let pair = ramp_pair(16, 16, 0.4);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 200,
            ..TrainConfig::default()
        };
        let fit = fit_direct(&[pair], 4, &cfg, &LossWeights::default(), IntervalMode::Adaptive).unwrap();
        let head: f64 = fit.history[..20].iter().map(|r| r.loss.total).sum::<f64>() / 20.0;
        let tail: f64 = fit.history[180..].iter().map(|r| r.loss.total).sum::<f64>() / 20.0;
        assert!(tail < head);
    }

    #[test]
    fn uniform_mode_keeps_knots() {
        let pair = ramp_pair(8, 8, 0.5);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 20,
            ..TrainConfig::default()
        };
        let fit = fit_direct(&[pair], 5, &cfg, &LossWeights::default(), IntervalMode::Uniform).unwrap();
        assert_eq!(fit.lattice.coords(), &uniform_coordinates(5).unwrap());
    }

    #[test]
    fn shared_mode_keeps_rows_equal() {
        let pair = ramp_pair(8, 8, 0.5);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 30,
            freeze_interval_epochs: 2,
            ..TrainConfig::default()
        };
        let fit = fit_direct(&[pair], 5, &cfg, &LossWeights::default(), IntervalMode::Shared).unwrap();
        assert!(fit.lattice.coords().is_shared());
        assert_ne!(fit.lattice.coords(), &uniform_coordinates(5).unwrap());
    }

    #[test]
    fn frozen_logits_do_not_move() {
        let pair = ramp_pair(8, 8, 0.5);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 5,
            freeze_interval_epochs: 5,
            ..TrainConfig::default()
        };
        let fit = fit_direct(&[pair], 4, &cfg, &LossWeights::default(), IntervalMode::Adaptive).unwrap();
        assert_eq!(fit.logits.as_slice(), &[1.0; 9]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let pair = ramp_pair(4, 4, 0.5);
        let bad = TrainConfig {
            epochs: 3,
            freeze_interval_epochs: 5,
            ..TrainConfig::default()
        };
        assert!(fit_direct(&[pair.clone()], 4, &bad, &LossWeights::default(), IntervalMode::Adaptive).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(fit_direct(&[pair], 4, &bad, &LossWeights::default(), IntervalMode::Adaptive).is_err());
        assert!(fit_direct(&[], 4, &TrainConfig::default(), &LossWeights::default(), IntervalMode::Adaptive).is_err());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let pair = ramp_pair(8, 8, 0.5);
        let cfg = TrainConfig {
            learning_rate: 1e4,
            epochs: 200,
            freeze_interval_epochs: 0,
            interval_lr_decay: 1.0,
            ..TrainConfig::default()
        };
        match fit_direct(&[pair], 4, &cfg, &LossWeights::default(), IntervalMode::Adaptive) {
            Err(Error::TrainingDiverged { epoch, .. }) => assert!(epoch > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn history_csv_layout() {
        let rec = LossRecord {
            step: 3,
            loss: LossBreakdown {
                total: 0.5,
                reconstruction: 0.25,
                smoothness: 0.125,
                monotonicity: 0.0,
            },
        };
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,loss,l_r,l_s,l_m"));
        let fields: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields, vec![3.0, 0.5, 0.25, 0.125, 0.0]);
    }
}
