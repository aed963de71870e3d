//! Binary PPM (P6) with 8-bit or big-endian 16-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lattice::CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    fn from_maxval(maxval: u32) -> Option<Self> {
        match maxval {
            255 => Some(BitDepth::Eight),
            65535 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

/// A decoded PPM and the sample depth it was stored with.
#[derive(Clone, Debug, PartialEq)]
pub struct PpmImage {
    pub image: ImageBuffer,
    pub depth: BitDepth,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    /// Next decimal field and the offset it starts at.
    fn number(&mut self, what: &str) -> Result<(u32, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map(|v| (v, start))
            .map_err(|_| parse_err(start, format!("{what} out of range")))
    }
}

/// Decodes a P6 file held in memory.
pub fn decode_ppm(bytes: &[u8]) -> Result<PpmImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(parse_err(0, "missing P6 magic number"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?.0 as usize;
    let height = h.number("height")?.0 as usize;
    let (maxval, maxval_at) = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("zero image dimension {width}x{height}")));
    }
    let depth = BitDepth::from_maxval(maxval)
        .ok_or_else(|| parse_err(maxval_at, format!("unsupported maxval {maxval}")))?;
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(parse_err(h.pos, "expected whitespace after maxval")),
    }

    let n = width * height;
    let sample_bytes = if depth == BitDepth::Eight { 1 } else { 2 };
    let need = n * CHANNELS * sample_bytes;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated raster: expected {need} bytes, found {}", raster.len()),
        ));
    }
    if raster.len() > need {
        return Err(parse_err(h.pos + need, "trailing data after raster"));
    }

    let scale = maxval as f64;
    let mut data = vec![0.0; CHANNELS * n];
    for p in 0..n {
        for c in 0..CHANNELS {
            let s = p * CHANNELS + c;
            let v = match depth {
                BitDepth::Eight => raster[s] as u32,
                BitDepth::Sixteen => u16::from_be_bytes([raster[2 * s], raster[2 * s + 1]]) as u32,
            };
            if v > maxval {
                return Err(parse_err(h.pos + s * sample_bytes, format!("sample {v} exceeds maxval")));
            }
            data[c * n + p] = v as f64 / scale;
        }
    }
    Ok(PpmImage {
        image: ImageBuffer::new(width, height, data)?,
        depth,
    })
}

/// Quantizes with round-half-up and encodes as P6.
pub fn encode_ppm(img: &ImageBuffer, depth: BitDepth) -> Vec<u8> {
    let n = img.pixel_count();
    let maxval = depth.maxval();
    let mut out = format!("P6\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let scale = maxval as f64;
    for p in 0..n {
        for v in img.pixel(p) {
            let q = (v * scale + 0.5).floor().min(scale) as u32;
            match depth {
                BitDepth::Eight => out.push(q as u8),
                BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
            }
        }
    }
    out
}

pub fn read_ppm(path: &Path) -> Result<PpmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

/// Reads an image, discarding the stored bit depth.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    Ok(read_ppm(path)?.image)
}

pub fn write_image(img: &ImageBuffer, path: &Path, depth: BitDepth) -> Result<()> {
    fs::write(path, encode_ppm(img, depth)).map_err(|e| Error::io(path, e))
}
