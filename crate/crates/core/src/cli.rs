//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 when the inputs or the
//! computation fail.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{accumulative_error_histogram, aeh_csv, coords_csv, diagnostics_svg, psnr, write_text};
use crate::bench::run_bench;
use crate::error::{Error, Result};
use crate::io::cube::export_cube;
use crate::io::ppm::{read_ppm, write_image, BitDepth};
use crate::io::{load_file, read_manifest, save_file, LatticeFile};
use crate::predictor::predict_lattice;
use crate::trainer::{
    fit_direct, save_history_csv, train_predictor, ImagePair, IntervalMode, LossWeights, TrainConfig,
};
use crate::transform::transform_image;

/// Step size used by `fit` and `train` unless `--lr` is given.
pub const DEFAULT_CLI_LR: f64 = 3e-2;

#[derive(Parser, Debug)]
#[command(name = "adaptive-lut", version, about = "Fit, apply and inspect non-uniform 3D LUTs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one lattice directly to an input/target image pair.
    Fit(FitArgs),
    /// Apply a lattice file to an image.
    Apply(ApplyArgs),
    /// Train an image-adaptive predictor on a manifest of pairs.
    Train(TrainArgs),
    /// Write the accumulative error histogram of an image pair.
    Aeh(AehArgs),
    /// Measure transform throughput and lookup cost.
    Bench(BenchArgs),
    /// Resample a lattice onto a uniform grid and write a .cube file.
    ExportCube(ExportCubeArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 17)]
    nsize: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Learn the sampling intervals (default).
    #[arg(long, conflicts_with = "uniform")]
    adaptive: bool,
    /// Keep uniform sampling intervals.
    #[arg(long)]
    uniform: bool,
    /// Share one interval row between the three axes.
    #[arg(long, conflicts_with = "uniform")]
    shared: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLI_LR)]
    lr: f64,
    /// Steps before the intervals start training.
    #[arg(long, default_value_t = 5)]
    freeze: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV file receiving the loss history.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    #[arg(long)]
    lut: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Output bit depth, 8 or 16; defaults to the input's.
    #[arg(long)]
    depth: Option<u32>,
    /// Use the stored lattice even when the file holds a predictor.
    #[arg(long)]
    fixed: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    pairs_manifest: PathBuf,
    #[arg(long, default_value_t = 9)]
    nsize: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLI_LR)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    freeze: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long)]
    shared: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AehArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = crate::analysis::DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out_csv: PathBuf,
    /// Lattice whose sampling coordinates are exported alongside.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Write the lattice's sampling coordinates (requires --lut).
    #[arg(long, requires = "lut")]
    coords_csv: Option<PathBuf>,
    /// Write an SVG plot of the histogram and coordinates (requires --lut).
    #[arg(long, requires = "lut")]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated pixel counts.
    #[arg(long, value_delimiter = ',', default_value = "2000000,8000000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExportCubeArgs {
    #[arg(long)]
    lut: PathBuf,
    #[arg(long, default_value_t = 33)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs the tool on `argv` (including the program name) and returns the exit
/// code.
pub fn cli_main(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Apply(a) => apply(a),
        Command::Train(a) => train(a),
        Command::Aeh(a) => aeh(a),
        Command::Bench(a) => bench(a),
        Command::ExportCube(a) => {
            let file = load_file(&a.lut)?;
            export_cube(&file.lattice, a.size, &a.out)
        }
    }
}

fn load_pair(input: &Path, target: &Path) -> Result<ImagePair> {
    ImagePair::new(read_ppm(input)?.image, read_ppm(target)?.image)
}

fn config(lr: f64, epochs: usize, freeze: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        freeze_interval_epochs: freeze.min(epochs),
        batch_size: batch,
        seed,
        ..TrainConfig::default()
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let pair = load_pair(&a.input, &a.target)?;
    let mode = match (a.uniform, a.shared) {
        (true, _) => IntervalMode::Uniform,
        (false, true) => IntervalMode::Shared,
        (false, false) => IntervalMode::Adaptive,
    };
    let cfg = config(a.lr, a.steps, a.freeze, 1, a.seed);
    let fit = fit_direct(&[pair.clone()], a.nsize, &cfg, &LossWeights::default(), mode)?;
    save_file(
        &LatticeFile {
            lattice: fit.lattice.clone(),
            predictor: None,
        },
        &a.out,
    )?;
    if let Some(path) = &a.history {
        save_history_csv(path, &fit.history)?;
    }
    let out = transform_image(&pair.input, &fit.lattice);
    println!("psnr_db={:.4}", psnr(&out, &pair.target)?);
    Ok(())
}

fn apply(a: ApplyArgs) -> Result<()> {
    let file = load_file(&a.lut)?;
    let input = read_ppm(&a.input)?;
    let depth = match a.depth {
        None => input.depth,
        Some(8) => BitDepth::Eight,
        Some(16) => BitDepth::Sixteen,
        Some(d) => return Err(Error::invalid(format!("unsupported output depth {d}"))),
    };
    let lattice = match (&file.predictor, a.fixed) {
        (Some(params), false) => predict_lattice(&input.image, params)?,
        _ => file.lattice,
    };
    write_image(&transform_image(&input.image, &lattice), &a.output, depth)
}

fn train(a: TrainArgs) -> Result<()> {
    let manifest = read_manifest(&a.pairs_manifest)?;
    let pairs = manifest
        .iter()
        .map(|(i, t)| load_pair(i, t))
        .collect::<Result<Vec<_>>>()?;
    let cfg = config(a.lr, a.epochs, a.freeze, a.batch, a.seed);
    let result = train_predictor(&pairs, a.nsize, a.m, &cfg, &LossWeights::default(), a.shared)?;
    // stored lattice: the prediction for the first training input
    let lattice = predict_lattice(&pairs[0].input, &result.params)?;
    save_file(
        &LatticeFile {
            lattice,
            predictor: Some(result.params),
        },
        &a.out,
    )?;
    if let Some(path) = &a.history {
        save_history_csv(path, &result.history)?;
    }
    if let Some(last) = result.history.last() {
        println!("final_loss={:.6e}", last.loss.total);
    }
    Ok(())
}

fn aeh(a: AehArgs) -> Result<()> {
    let input = read_ppm(&a.input)?.image;
    let target = read_ppm(&a.target)?.image;
    let hist = accumulative_error_histogram(&input, &target, a.bins)?;
    write_text(&a.out_csv, &aeh_csv(&hist))?;
    if let Some(lut) = &a.lut {
        let file = load_file(lut)?;
        let lattice = match &file.predictor {
            Some(params) => predict_lattice(&input, params)?,
            None => file.lattice,
        };
        if let Some(path) = &a.coords_csv {
            write_text(path, &coords_csv(lattice.coords()))?;
        }
        if let Some(path) = &a.svg {
            write_text(path, &diagnostics_svg(lattice.coords(), &hist))?;
        }
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let report = run_bench(&a.sizes, a.threads, a.repeat, a.seed)?;
    println!("{report}");
    if !report.within_bound() {
        return Err(Error::invalid(format!(
            "lookup used {} comparisons, bound is {}",
            report.max_comparisons(),
            report.comparison_bound
        )));
    }
    Ok(())
}
