//! Thin-lens geometry: camera parameters and depth to a signed
//! circle-of-confusion (CoC) radius in pixels.
//!
//! Units: focal length in millimeters, aperture as an f-number, focus and
//! scene distances in meters, sensor sampling in pixels per millimeter.
//! A positive radius means front focus (the point lies behind the focal
//! plane, `d > s`); negative means back focus (`d < s`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::DepthMap;

/// Sensor sampling density used when a camera does not set one.
pub const DEFAULT_PIXELS_PER_MM: f64 = 3000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub id: String,
    pub focal_length_mm: f64,
    pub f_number: f64,
    pub focus_distance_m: f64,
    #[serde(default = "default_ppmm")]
    pub pixels_per_mm: f64,
    /// Division-model radial distortion coefficients `[c1, c2, c3]`.
    #[serde(default)]
    pub distortion: [f64; 3],
}

fn default_ppmm() -> f64 {
    DEFAULT_PIXELS_PER_MM
}

impl CameraConfig {
    pub fn new(id: impl Into<String>, focal_length_mm: f64, f_number: f64, focus_distance_m: f64) -> Self {
        Self {
            id: id.into(),
            focal_length_mm,
            f_number,
            focus_distance_m,
            pixels_per_mm: DEFAULT_PIXELS_PER_MM,
            distortion: [0.0; 3],
        }
    }

    pub fn with_pixels_per_mm(mut self, ppmm: f64) -> Self {
        self.pixels_per_mm = ppmm;
        self
    }

    pub fn with_distortion(mut self, coeffs: [f64; 3]) -> Self {
        self.distortion = coeffs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCamera(format!("{}: {m}", self.id)));
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.focal_length_mm) {
            return bad(format!("focal length {} mm must be > 0", self.focal_length_mm));
        }
        if !finite_pos(self.f_number) {
            return bad(format!("f-number {} must be > 0", self.f_number));
        }
        if !finite_pos(self.pixels_per_mm) {
            return bad(format!("pixels_per_mm {} must be > 0", self.pixels_per_mm));
        }
        if !(self.focus_distance_m.is_finite() && self.focus_distance_m * 1000.0 > self.focal_length_mm) {
            return bad(format!(
                "focus distance {} m must exceed the focal length {} mm",
                self.focus_distance_m, self.focal_length_mm
            ));
        }
        if self.distortion.iter().any(|c| !c.is_finite()) {
            return bad("distortion coefficients must be finite".into());
        }
        Ok(())
    }

    /// CoC radius in pixels for a point at infinity; the scale `A` in
    /// `r(d) = A * (d - s) / d`.
    pub fn far_limit_px(&self) -> Result<f64> {
        let (s_prime, q) = lens_derived(self)?;
        let s_mm = self.focus_distance_m * 1000.0;
        Ok(0.5 * q * (s_prime / s_mm) * self.pixels_per_mm)
    }
}

/// Sensor distance `s' = f s / (s - f)` and aperture diameter `q = f / F`,
/// both in millimeters.
pub fn lens_derived(cam: &CameraConfig) -> Result<(f64, f64)> {
    cam.validate()?;
    let f = cam.focal_length_mm;
    let s = cam.focus_distance_m * 1000.0;
    Ok((f * s / (s - f), f / cam.f_number))
}

/// Signed CoC radius in pixels for a point `depth_m` meters away.
pub fn coc_radius(cam: &CameraConfig, depth_m: f64) -> Result<f64> {
    if !(depth_m.is_finite() && depth_m > 0.0) {
        return Err(Error::InvalidParameter(format!("depth {depth_m} must be > 0")));
    }
    Ok(radius_from_scale(cam.far_limit_px()?, cam.focus_distance_m, depth_m))
}

#[inline]
fn radius_from_scale(far_limit_px: f64, focus_m: f64, depth_m: f64) -> f64 {
    far_limit_px * ((depth_m - focus_m) / depth_m)
}

/// Per-pixel signed CoC radius.
#[derive(Debug, Clone, PartialEq)]
pub struct CocField {
    width: usize,
    height: usize,
    radius: Vec<f64>,
    far_limit_px: f64,
    focus_distance_m: f64,
}

impl CocField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radius
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.radius[y * self.width + x]
    }

    /// Depth in meters whose CoC radius is `radius_px`, if one exists.
    pub fn depth_at_radius(&self, radius_px: f64) -> Option<f64> {
        let a = self.far_limit_px;
        if radius_px >= a || a <= 0.0 {
            return None;
        }
        Some(a * self.focus_distance_m / (a - radius_px))
    }

    /// Field built directly from radii, for callers that synthesize CoC maps.
    /// Depth lookups assume a far limit of `far_limit_px` at focus `focus_m`.
    pub fn from_radii(
        width: usize,
        height: usize,
        radius: Vec<f64>,
        far_limit_px: f64,
        focus_m: f64,
    ) -> Result<Self> {
        if radius.len() != width * height || radius.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter("CoC radii must be finite and match dimensions".into()));
        }
        Ok(Self {
            width,
            height,
            radius,
            far_limit_px,
            focus_distance_m: focus_m,
        })
    }
}

pub fn coc_field(cam: &CameraConfig, depth: &DepthMap) -> Result<CocField> {
    let a = cam.far_limit_px()?;
    let s = cam.focus_distance_m;
    Ok(CocField {
        width: depth.width(),
        height: depth.height(),
        radius: depth.data().iter().map(|&d| radius_from_scale(a, s, d)).collect(),
        far_limit_px: a,
        focus_distance_m: s,
    })
}
