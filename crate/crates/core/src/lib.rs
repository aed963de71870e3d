//! Differentiable 3D lookup tables with learned, non-uniform sampling
//! intervals.
//!
//! The crate covers lattice construction from interval logits, the
//! lookup/interpolation transform and its analytic backward pass, a small
//! image-adaptive predictor, gradient-based fitting, error-histogram
//! diagnostics and the file formats used by the command-line tool.

pub mod analysis;
pub mod bench;
pub mod cli;
pub mod error;
pub mod image;
pub mod io;
pub mod lattice;
pub mod predictor;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
pub use image::ImageBuffer;
pub use lattice::{IntervalLogits, Lattice, LutTable, NormalizedIntervals, SamplingCoordinates};
pub use transform::{transform_image, transform_pixel, LatticeGradients};
