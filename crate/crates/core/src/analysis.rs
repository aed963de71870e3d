//! Error diagnostics: per-channel accumulative error histograms, PSNR, and
//! CSV/SVG export of learned coordinates against the histogram.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lattice::{SamplingCoordinates, CHANNELS};

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 1000;

/// PSNR reported when the MSE falls below [`PSNR_MSE_FLOOR`].
pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

/// Histogram of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelHistogram {
    /// Normalized error mass per input-value bin.
    pub bins: Vec<f64>,
    /// Running sum of `bins`.
    pub aeh: Vec<f64>,
    /// Total squared error of the channel.
    pub theta: f64,
}

impl ChannelHistogram {
    /// True when the channel has zero total error; `bins` and `aeh` are then all zero.
    pub fn no_error(&self) -> bool {
        self.theta == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorHistogram {
    pub channels: [ChannelHistogram; CHANNELS],
}

impl ErrorHistogram {
    pub fn n_bin(&self) -> usize {
        self.channels[0].bins.len()
    }

    pub fn no_error(&self) -> bool {
        self.channels.iter().all(ChannelHistogram::no_error)
    }
}

/// Elementwise squared difference, planar `3 x H x W`.
pub fn error_map(x: &ImageBuffer, y: &ImageBuffer) -> Result<Vec<f64>> {
    x.same_shape(y)?;
    Ok(x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .collect())
}

/// Bin `k` holds values with `k <= value * n_bin < k + 1`; 1.0 goes to the
/// last bin.
pub fn bin_index(value: f64, n_bin: usize) -> usize {
    ((value * n_bin as f64).floor().max(0.0) as usize).min(n_bin - 1)
}

/// Squared input/target error binned by input value, normalized per channel,
/// and its running sum.
pub fn accumulative_error_histogram(
    x: &ImageBuffer,
    y: &ImageBuffer,
    n_bin: usize,
) -> Result<ErrorHistogram> {
    if n_bin == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let d = error_map(x, y)?;
    let n = x.pixel_count();
    let channel = |c: usize| {
        let mut bins = vec![0.0; n_bin];
        for (&v, &e) in x.plane(c).iter().zip(&d[c * n..(c + 1) * n]) {
            bins[bin_index(v, n_bin)] += e;
        }
        let theta: f64 = bins.iter().sum();
        if theta > 0.0 {
            for b in &mut bins {
                *b /= theta;
            }
        } else {
            bins.iter_mut().for_each(|b| *b = 0.0);
        }
        let mut acc = 0.0;
        let mut aeh: Vec<f64> = bins
            .iter()
            .map(|b| {
                acc += b;
                acc
            })
            .collect();
        if theta > 0.0 {
            // running sum may drift a few ulps above 1
            for a in &mut aeh {
                *a = a.min(1.0);
            }
            *aeh.last_mut().expect("n_bin >= 1") = 1.0;
        }
        ChannelHistogram { bins, aeh, theta }
    };
    Ok(ErrorHistogram {
        channels: [channel(0), channel(1), channel(2)],
    })
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` images, capped at 100 dB.
pub fn psnr(pred: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    pred.same_shape(target)?;
    Ok(psnr_from_mse(mse(pred.as_slice(), target.as_slice())))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        -10.0 * mse.log10()
    }
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

const CHANNEL_NAMES: [&str; CHANNELS] = ["r", "g", "b"];

fn channel_from_name(name: &str) -> Option<usize> {
    CHANNEL_NAMES.iter().position(|&n| n == name)
}

/// `channel,bin_center,aeh` rows.
pub fn aeh_csv(hist: &ErrorHistogram) -> String {
    let n_bin = hist.n_bin();
    let mut out = String::from("channel,bin_center,aeh\n");
    for (c, ch) in hist.channels.iter().enumerate() {
        for (k, a) in ch.aeh.iter().enumerate() {
            let center = (k as f64 + 0.5) / n_bin as f64;
            writeln!(out, "{},{},{}", CHANNEL_NAMES[c], center, a).expect("string write");
        }
    }
    out
}

/// `channel,index,coordinate` rows.
pub fn coords_csv(coords: &SamplingCoordinates) -> String {
    let mut out = String::from("channel,index,coordinate\n");
    for c in 0..CHANNELS {
        for (i, v) in coords.row(c).iter().enumerate() {
            writeln!(out, "{},{},{}", CHANNEL_NAMES[c], i, v).expect("string write");
        }
    }
    out
}

fn csv_rows<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, [&'a str; 3])>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("expected header {header:?}, found {other:?}"),
            })
        }
    }
    let mut offset = header.len() + 1;
    let mut rows = Vec::new();
    for line in lines {
        let start = offset;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                offset: start,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        rows.push((start, [fields[0], fields[1], fields[2]]));
    }
    Ok(rows.into_iter())
}

fn parse_field<T: std::str::FromStr>(s: &str, offset: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        offset,
        message: format!("invalid number {s:?}"),
    })
}

fn parse_channel(s: &str, offset: usize) -> Result<usize> {
    channel_from_name(s.trim()).ok_or_else(|| Error::Parse {
        offset,
        message: format!("unknown channel {s:?}"),
    })
}

/// Parses [`aeh_csv`] output into per-channel `(bin_center, aeh)` columns.
pub fn parse_aeh_csv(text: &str) -> Result<[Vec<(f64, f64)>; CHANNELS]> {
    let mut out: [Vec<(f64, f64)>; CHANNELS] = Default::default();
    for (offset, [ch, center, aeh]) in csv_rows(text, "channel,bin_center,aeh")? {
        let c = parse_channel(ch, offset)?;
        out[c].push((parse_field(center, offset)?, parse_field(aeh, offset)?));
    }
    Ok(out)
}

/// Parses [`coords_csv`] output back into coordinates.
pub fn parse_coords_csv(text: &str) -> Result<SamplingCoordinates> {
    let mut rows: [Vec<f64>; CHANNELS] = Default::default();
    for (offset, [ch, idx, value]) in csv_rows(text, "channel,index,coordinate")? {
        let c = parse_channel(ch, offset)?;
        let i: usize = parse_field(idx, offset)?;
        if i != rows[c].len() {
            return Err(Error::Parse {
                offset,
                message: format!("expected index {}, found {i}", rows[c].len()),
            });
        }
        rows[c].push(parse_field(value, offset)?);
    }
    SamplingCoordinates::from_rows([&rows[0], &rows[1], &rows[2]])
}

/// Line plot of the three AEH curves with the lattice knots as tick marks.
pub fn diagnostics_svg(coords: &SamplingCoordinates, hist: &ErrorHistogram) -> String {
    const W: f64 = 640.0;
    const H: f64 = 200.0;
    const PAD: f64 = 20.0;
    const COLORS: [&str; CHANNELS] = ["#d62728", "#2ca02c", "#1f77b4"];
    let n_bin = hist.n_bin();
    let panel_h = H + 2.0 * PAD;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">"#,
        W + 2.0 * PAD,
        CHANNELS as f64 * panel_h
    )
    .expect("string write");
    for c in 0..CHANNELS {
        let top = c as f64 * panel_h + PAD;
        let x_of = |v: f64| PAD + v * W;
        let y_of = |v: f64| top + H - v * H;
        writeln!(
            svg,
            r##"<rect x="{PAD}" y="{top}" width="{W}" height="{H}" fill="none" stroke="#888"/>"##
        )
        .expect("string write");
        let points: Vec<String> = hist.channels[c]
            .aeh
            .iter()
            .enumerate()
            .map(|(k, a)| format!("{:.2},{:.2}", x_of((k as f64 + 0.5) / n_bin as f64), y_of(*a)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[c],
            points.join(" ")
        )
        .expect("string write");
        for &p in coords.row(c) {
            let x = x_of(p);
            writeln!(
                svg,
                r#"<line class="tick" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{}"/>"#,
                top + H,
                top + H - 8.0,
                COLORS[c]
            )
            .expect("string write");
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Paths written by [`export_diagnostics`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsPaths {
    pub aeh_csv: PathBuf,
    pub coords_csv: PathBuf,
    pub svg: Option<PathBuf>,
}

/// Writes `<prefix>_aeh.csv`, `<prefix>_coords.csv` and optionally
/// `<prefix>.svg`.
pub fn export_diagnostics(
    coords: &SamplingCoordinates,
    hist: &ErrorHistogram,
    prefix: &Path,
    with_svg: bool,
) -> Result<DiagnosticsPaths> {
    let with_suffix = |suffix: &str| {
        let mut name = prefix.as_os_str().to_owned();
        name.push(suffix);
        PathBuf::from(name)
    };
    let paths = DiagnosticsPaths {
        aeh_csv: with_suffix("_aeh.csv"),
        coords_csv: with_suffix("_coords.csv"),
        svg: with_svg.then(|| with_suffix(".svg")),
    };
    write_text(&paths.aeh_csv, &aeh_csv(hist))?;
    write_text(&paths.coords_csv, &coords_csv(coords))?;
    if let Some(svg) = &paths.svg {
        write_text(svg, &diagnostics_svg(coords, hist))?;
    }
    Ok(paths)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
