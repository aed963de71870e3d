//! End-to-end behaviour of direct fitting and predictor training.

mod common;

use adaptive_lut::predictor::predict_lattice;
use adaptive_lut::trainer::{
    fit_direct, non_monotone_fraction, train_predictor, ImagePair, IntervalMode, LossWeights, TrainConfig,
};
use adaptive_lut::transform_image;
use common::*;

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-2,
        epochs,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn pair(gamma: [f64; 3], seed: u64) -> ImagePair {
    let (i, t) = gamma_pair(32, 32, 0.0, 1.0, gamma, &mut rng(seed));
    ImagePair::new(i, t).unwrap()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn fitted_monotone_curves_stay_monotone() {
    for (gamma, mode) in [
        ([0.25; 3], IntervalMode::Adaptive),
        ([0.4, 1.0, 2.2], IntervalMode::Shared),
        ([2.0, 0.5, 1.5], IntervalMode::Uniform),
    ] {
        let fit = fit_direct(&[pair(gamma, 1)], 6, &config(800), &LossWeights::default(), mode).unwrap();
        let frac = non_monotone_fraction(fit.lattice.values());
        assert!(frac < 0.01, "{mode:?}: {frac}");
    }
}

#[test]
fn loss_falls_over_a_fit() {
    let fit = fit_direct(&[pair([0.25; 3], 2)], 4, &config(1000), &LossWeights::default(), IntervalMode::Adaptive)
        .unwrap();
    assert_eq!(fit.history.len(), 1000);
    let head = mean(fit.history[..100].iter().map(|r| r.loss.total));
    let tail = mean(fit.history[900..].iter().map(|r| r.loss.total));
    assert!(tail <= head, "{tail} > {head}");
    assert!(tail < 0.1 * head);
}

#[test]
fn adaptive_knots_move_toward_the_steep_end() {
    // x^0.25 is steepest near 0, so knots should crowd toward 0
    let fit = fit_direct(&[pair([0.25; 3], 3)], 5, &config(1500), &LossWeights::default(), IntervalMode::Adaptive)
        .unwrap();
    for c in 0..3 {
        let row = fit.lattice.coords().row(c);
        assert!(row[1] < 0.25, "channel {c}: {row:?}");
    }
}

#[test]
fn predictor_fits_a_two_style_set() {
    let mut r = rng(4);
    let mut pairs = Vec::new();
    for _ in 0..2 {
        for g in [0.5, 2.0] {
            let (i, t) = gamma_pair(16, 16, 0.0, 1.0, [g; 3], &mut r);
            pairs.push(ImagePair::new(i, t).unwrap());
        }
    }
    let result = train_predictor(&pairs, 5, 2, &config(100), &LossWeights::default(), false).unwrap();
    let first = mean(result.history[..pairs.len()].iter().map(|r| r.loss.total));
    let n = result.history.len();
    let last = mean(result.history[n - pairs.len()..].iter().map(|r| r.loss.total));
    assert!(last < 0.2 * first, "{last} vs {first}");
    for p in &pairs {
        let lattice = predict_lattice(&p.input, &result.params).unwrap();
        let out = transform_image(&p.input, &lattice);
        assert!(psnr_db(mse(out.as_slice(), p.target.as_slice())) > 25.0);
    }
}
