use crate::error::{Error, Result};
use crate::lattice::CHANNELS;

/// Planar RGB image with samples in `[0, 1]`, stored as three `height * width`
/// planes in r, g, b order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let len = CHANNELS * width * height;
        if data.len() != len {
            return Err(Error::shape(len, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "sample {} at position {pos} is outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from arbitrary samples, clamping into `[0, 1]`.
    /// NaN becomes 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, data)
    }

    /// Builds an image from interleaved `rgbrgb...` samples.
    pub fn from_interleaved(width: usize, height: usize, pixels: &[f64]) -> Result<Self> {
        let n = width * height;
        if pixels.len() != CHANNELS * n {
            return Err(Error::shape(CHANNELS * n, pixels.len()));
        }
        let mut data = vec![0.0; CHANNELS * n];
        for (p, px) in pixels.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[c * n + p] = px[c];
            }
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, color: [f64; CHANNELS]) -> Result<Self> {
        let n = width * height;
        let data = color.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, p: usize) -> [f64; CHANNELS] {
        let n = self.pixel_count();
        [self.data[p], self.data[n + p], self.data[2 * n + p]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Tiles the image `times` times vertically.
    pub fn repeat_rows(&self, times: usize) -> Result<Self> {
        let n = self.pixel_count();
        let mut data = Vec::with_capacity(self.data.len() * times);
        for c in 0..CHANNELS {
            for _ in 0..times {
                data.extend_from_slice(&self.data[c * n..(c + 1) * n]);
            }
        }
        Self::new(self.width, self.height * times, data)
    }
}
