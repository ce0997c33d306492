//! Core raster types, file I/O, convolution and resampling.
//!
//! Conventions used everywhere: row-major storage, top-left origin, +x to
//! the right, +y down. Multi-channel images are channel-interleaved.

pub mod conv;
mod image;
pub mod io;
mod kernel;

pub use image::{DepthMap, Image};
pub use io::{load_depth, load_image, save_image, BitDepth, DepthFormat, DepthLoadOptions};
pub use kernel::Kernel2D;
