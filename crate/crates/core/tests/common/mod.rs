#![allow(dead_code)]

use adaptive_lut::lattice::{coordinates_from_logits, IntervalLogits, CHANNELS};
use adaptive_lut::{ImageBuffer, Lattice, LutTable, SamplingCoordinates};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Non-uniform coordinates from logits drawn in `[-spread, spread]`.
pub fn random_coords(n_s: usize, spread: f64, rng: &mut ChaCha8Rng) -> SamplingCoordinates {
    let logits: Vec<f64> = (0..CHANNELS * (n_s - 1))
        .map(|_| rng.random_range(-spread..=spread))
        .collect();
    coordinates_from_logits(&IntervalLogits::new(n_s, logits).unwrap()).unwrap()
}

pub fn random_table(n_s: usize, rng: &mut ChaCha8Rng) -> LutTable {
    LutTable::new(
        n_s,
        (0..CHANNELS * n_s * n_s * n_s).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

pub fn random_lattice(n_s: usize, rng: &mut ChaCha8Rng) -> Lattice {
    Lattice::new(random_coords(n_s, 1.5, rng), random_table(n_s, rng)).unwrap()
}

pub fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    ImageBuffer::new(w, h, (0..CHANNELS * w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Reference lookup: linear scan for the last knot `<= x`, capped at the
/// second-to-last knot.
pub fn scan_cell(row: &[f64], x: f64) -> usize {
    let mut lo = 0;
    for s in 0..row.len() - 1 {
        if row[s] <= x {
            lo = s;
        }
    }
    lo
}

/// Reference interpolation on raw coordinate rows and a flat table, with no
/// validation, so tests can perturb knots freely.
pub fn reference_eval(rows: [&[f64]; CHANNELS], table: &[f64], x: [f64; CHANNELS]) -> [f64; CHANNELS] {
    let n = rows[0].len();
    let lo: Vec<usize> = (0..CHANNELS).map(|c| scan_cell(rows[c], x[c])).collect();
    let d: Vec<f64> = (0..CHANNELS)
        .map(|c| (x[c] - rows[c][lo[c]]) / (rows[c][lo[c] + 1] - rows[c][lo[c]]))
        .collect();
    let mut y = [0.0; CHANNELS];
    for (c, yc) in y.iter_mut().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let w = if i == 1 { d[0] } else { 1.0 - d[0] }
                        * if j == 1 { d[1] } else { 1.0 - d[1] }
                        * if k == 1 { d[2] } else { 1.0 - d[2] };
                    let idx = ((c * n + lo[0] + i) * n + lo[1] + j) * n + lo[2] + k;
                    *yc += w * table[idx];
                }
            }
        }
    }
    y
}

fn lattice_rows(lattice: &Lattice) -> [&[f64]; CHANNELS] {
    let c = lattice.coords();
    [c.row(0), c.row(1), c.row(2)]
}

pub fn reference_pixel(lattice: &Lattice, x: [f64; CHANNELS]) -> [f64; CHANNELS] {
    reference_eval(lattice_rows(lattice), lattice.values().as_slice(), x)
}

/// Single-threaded planar output of the reference interpolator, unclamped.
pub fn reference_transform(img: &ImageBuffer, lattice: &Lattice) -> Vec<f64> {
    let n = img.pixel_count();
    let mut out = vec![0.0; CHANNELS * n];
    for p in 0..n {
        let y = reference_pixel(lattice, img.pixel(p));
        for c in 0..CHANNELS {
            out[c * n + p] = y[c];
        }
    }
    out
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn psnr_db(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

/// Relative error with a floor on the denominator, so gradients that are
/// zero analytically are compared in absolute terms.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// A query in `[0, 1]` at least `margin` away from every knot of `row`.
pub fn query_away_from_knots(row: &[f64], margin: f64, rng: &mut ChaCha8Rng) -> f64 {
    let wide: Vec<usize> = (0..row.len() - 1)
        .filter(|&s| row[s + 1] - row[s] > 2.0 * margin + 1e-9)
        .collect();
    assert!(!wide.is_empty(), "no cell wider than {}", 2.0 * margin);
    let s = wide[rng.random_range(0..wide.len())];
    rng.random_range(row[s] + margin..row[s + 1] - margin)
}

/// Interleaved gamma-mapped pair with input values uniform in `[lo, hi)`.
pub fn gamma_pair(
    w: usize,
    h: usize,
    lo: f64,
    hi: f64,
    gamma: [f64; CHANNELS],
    rng: &mut ChaCha8Rng,
) -> (ImageBuffer, ImageBuffer) {
    let n = w * h;
    let data: Vec<f64> = (0..CHANNELS * n).map(|_| rng.random_range(lo..hi)).collect();
    let target = data
        .iter()
        .enumerate()
        .map(|(i, v)| v.powf(gamma[i / n]))
        .collect();
    (
        ImageBuffer::new(w, h, data).unwrap(),
        ImageBuffer::new(w, h, target).unwrap(),
    )
}

/// Compares every analytic gradient of `grad_out . transform(x)` for one random
/// lattice and query against central differences of the reference
/// interpolator. Returns the largest relative error.
pub fn transform_fd_max_error(n_s: usize, spread: f64, rng: &mut ChaCha8Rng) -> f64 {
    use adaptive_lut::transform::backward_pixel;
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-4;

    let coords = loop {
        let c = random_coords(n_s, spread, rng);
        let ok = (0..CHANNELS).all(|ch| {
            c.row(ch).windows(2).any(|w| w[1] - w[0] > 2e-3 + 1e-9)
        });
        if ok {
            break c;
        }
    };
    let lattice = Lattice::new(coords, random_table(n_s, rng)).unwrap();
    let x: [f64; CHANNELS] =
        std::array::from_fn(|c| query_away_from_knots(lattice.coords().row(c), 1e-3, rng));
    let g: [f64; CHANNELS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let pg = backward_pixel(x, &lattice, g).unwrap();

    let mut rows: Vec<Vec<f64>> = (0..CHANNELS).map(|c| lattice.coords().row(c).to_vec()).collect();
    let mut table = lattice.values().as_slice().to_vec();
    let loss = |rows: &[Vec<f64>], table: &[f64], x: [f64; CHANNELS]| {
        let y = reference_eval([&rows[0], &rows[1], &rows[2]], table, x);
        (0..CHANNELS).map(|c| g[c] * y[c]).sum::<f64>()
    };
    let mut worst: f64 = 0.0;

    for c in 0..CHANNELS {
        let fd = central_diff(
            |e| {
                let mut xp = x;
                xp[c] += e;
                loss(&rows, &table, xp)
            },
            H,
        );
        worst = worst.max(rel_err(pg.input[c], fd, FLOOR));
    }

    for c in 0..CHANNELS {
        let lo = pg.cell.axes[c].lo;
        for (side, knot) in [lo, lo + 1].into_iter().enumerate() {
            let orig = rows[c][knot];
            let f = |e: f64, rows: &mut Vec<Vec<f64>>| {
                rows[c][knot] = orig + e;
                let v = loss(rows, &table, x);
                rows[c][knot] = orig;
                v
            };
            let fd = (f(H, &mut rows) - f(-H, &mut rows)) / (2.0 * H);
            worst = worst.max(rel_err(pg.coords[c][side], fd, FLOOR));
        }
    }

    let cube = n_s * n_s * n_s;
    let (lr, lg, lb) = (pg.cell.axes[0].lo, pg.cell.axes[1].lo, pg.cell.axes[2].lo);
    for ch in 0..CHANNELS {
        for v in 0..8 {
            let (i, j, k) = (v >> 2, (v >> 1) & 1, v & 1);
            let idx = ch * cube + ((lr + i) * n_s + lg + j) * n_s + lb + k;
            let orig = table[idx];
            table[idx] = orig + H;
            let up = loss(&rows, &table, x);
            table[idx] = orig - H;
            let down = loss(&rows, &table, x);
            table[idx] = orig;
            let fd = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(pg.weights[v] * g[ch], fd, FLOOR));
        }
    }
    worst
}
