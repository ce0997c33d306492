//! Calibration tools: synthetic patterns, non-blind PSF estimation, PSF
//! parameter search and radial distortion fitting.

mod derivative;
mod estimate;
mod fit;
mod pattern;

pub use derivative::DerivativeSet;
pub use estimate::{estimate_psf, PsfEstimate, DEFAULT_L1_WEIGHT};
pub use fit::{
    fit_distortion_coeffs, fit_psf_params, psf_fit_objective, DistortionFit, DistortionGrids, PsfComponent,
    PsfFit, PsfFitGrids,
};
pub use pattern::{make_disk_pattern, make_square_pattern, GridSpec};
