//! Throughput benchmark for the forward transform.
//!
//! Reports per-pixel cost at several image sizes and the largest number of
//! knot comparisons any lookup needed. Absolute times depend on the machine;
//! only the comparison bound and the scaling between sizes are meaningful.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lattice::{coordinates_from_logits, IntervalLogits, Lattice, LutTable, CHANNELS};
use crate::transform::{comparison_bound, lookup_counted, transform_image_sequential, transform_raw};

pub const BENCH_N_S: usize = 33;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRun {
    pub pixels: usize,
    /// Wall time of every repeat, in milliseconds.
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
    pub ns_per_pixel: f64,
    pub max_comparisons: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub n_s: usize,
    pub threads: usize,
    pub comparison_bound: u32,
    pub runs: Vec<BenchRun>,
    /// Output of the smallest size was bit-identical to a single-threaded pass.
    pub matches_sequential: bool,
}

impl BenchReport {
    pub fn max_comparisons(&self) -> u32 {
        self.runs.iter().map(|r| r.max_comparisons).max().unwrap_or(0)
    }

    pub fn within_bound(&self) -> bool {
        self.max_comparisons() <= self.comparison_bound
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "n_s={} threads={} comparison_bound={}",
            self.n_s, self.threads, self.comparison_bound
        )?;
        writeln!(f, "pixels,median_ms,ns_per_pixel,max_comparisons")?;
        for r in &self.runs {
            writeln!(
                f,
                "{},{:.3},{:.3},{}",
                r.pixels, r.median_ms, r.ns_per_pixel, r.max_comparisons
            )?;
        }
        write!(f, "matches_sequential={}", self.matches_sequential)
    }
}

pub fn random_lattice(n_s: usize, rng: &mut ChaCha8Rng) -> Result<Lattice> {
    let logits = IntervalLogits::new(
        n_s,
        (0..CHANNELS * (n_s - 1)).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )?;
    let coords = coordinates_from_logits(&logits)?;
    let values = LutTable::new(
        n_s,
        (0..CHANNELS * n_s * n_s * n_s).map(|_| rng.random::<f64>()).collect(),
    )?;
    Lattice::new(coords, values)
}

/// Random image with `pixels` pixels laid out as a single row.
pub fn random_image(pixels: usize, rng: &mut ChaCha8Rng) -> Result<ImageBuffer> {
    let data = (0..CHANNELS * pixels).map(|_| rng.random::<f64>()).collect();
    ImageBuffer::new(pixels, 1, data)
}

fn max_comparisons(img: &ImageBuffer, lattice: &Lattice) -> Result<u32> {
    (0..CHANNELS)
        .into_par_iter()
        .map(|c| {
            let row = lattice.coords().row(c);
            img.plane(c)
                .par_iter()
                .map(|&x| lookup_counted(row, x).map(|(_, n)| n))
                .try_reduce(|| 0, |a, b| Ok(a.max(b)))
        })
        .try_reduce(|| 0, |a, b| Ok(a.max(b)))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Times the transform on random images of each size with `threads` workers,
/// `repeat` times per size, after one warm-up pass.
pub fn run_bench(sizes: &[usize], threads: usize, repeat: usize, seed: u64) -> Result<BenchReport> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::invalid("bench sizes must be non-empty and positive"));
    }
    if threads == 0 || repeat == 0 {
        return Err(Error::invalid("threads and repeat must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice = random_lattice(BENCH_N_S, &mut rng)?;

    let mut runs = Vec::with_capacity(sizes.len());
    let mut matches_sequential = true;
    let smallest = *sizes.iter().min().expect("non-empty");
    for &pixels in sizes {
        let img = random_image(pixels, &mut rng)?;
        let max_cmp = pool.install(|| max_comparisons(&img, &lattice))?;
        let mut times_ms = Vec::with_capacity(repeat);
        let mut last = pool.install(|| transform_raw(&img, &lattice));
        for _ in 0..repeat {
            let start = Instant::now();
            last = pool.install(|| transform_raw(&img, &lattice));
            times_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
        if pixels == smallest {
            let seq = transform_image_sequential(&img, &lattice);
            let par = ImageBuffer::from_clamped(img.width(), img.height(), last)?;
            matches_sequential &= seq == par;
        }
        let median_ms = median(&times_ms).max(f64::MIN_POSITIVE);
        runs.push(BenchRun {
            pixels,
            median_ms,
            ns_per_pixel: median_ms * 1e6 / pixels as f64,
            times_ms,
            max_comparisons: max_cmp,
        });
    }
    Ok(BenchReport {
        n_s: BENCH_N_S,
        threads,
        comparison_bound: comparison_bound(BENCH_N_S),
        runs,
        matches_sequential,
    })
}
