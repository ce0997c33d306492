//! Synthetic dual-pixel (DP) defocus data generation.
//!
//! The crate turns an all-in-focus image plus a depth map into left/right
//! dual-pixel views through a thin-lens circle-of-confusion model, a
//! parametric Butterworth-shaped DP point spread function, depth-layered
//! blurring with back-to-front compositing, radial lens distortion and
//! signal-dependent noise. It also carries the calibration solvers used to
//! fit the PSF and distortion parameters and the image-quality metrics used
//! to evaluate deblurring output.
//!
//! Module map:
//!
//! * [`imgcore`] rasters, kernels, PNG/PFM I/O, convolution, resampling
//! * [`optics`] thin-lens geometry and circle-of-confusion fields
//! * [`psfbank`] DP-PSF model and banks of representative PSFs
//! * [`render`] layered defocus rendering into a [`render::DpFrame`]
//! * [`lensfx`] radial distortion and signal-dependent noise
//! * [`calib`] calibration patterns, PSF estimation and parameter fitting
//! * [`metrics`] PSNR, SSIM, MAE, NCC and the multi-scale Sobel edge loss
//! * [`pipeline`] config-driven dataset generation and evaluation

pub mod calib;
pub mod error;
pub mod imgcore;
pub mod lensfx;
pub mod metrics;
pub mod optics;
pub mod pipeline;
pub mod psfbank;
pub mod render;
pub mod rng;

pub use error::{Error, Result};
pub use imgcore::{DepthMap, Image, Kernel2D};
pub use optics::{CameraConfig, CocField};
pub use psfbank::{DpPsf, PsfBank, PsfParams, PsfShape};
pub use render::DpFrame;
