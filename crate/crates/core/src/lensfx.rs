//! Post-render camera artifacts: division-model radial distortion and
//! signal-dependent Gaussian noise.
//!
//! Distortion maps an undistorted point `u` to
//! `d = o + (u - o) / (1 + c1 R^2 + c2 R^4 + c3 R^6)` where `o` is the frame
//! center and `R` is the distance of the undistorted point from `o`,
//! normalized so the frame corner has `R = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::rng::KeyedStream;

pub type DistortionCoeffs = [f64; 3];

/// Fitted coefficient sets for the five preset cameras, shortest focal
/// length first.
pub const PRESET_COEFFS: [DistortionCoeffs; 5] = [
    [2e-2, 2e-2, 3e-2],
    [8e-3, 2e-3, 2.2e-3],
    [-4e-3, 9e-4, -9e-4],
    [-7e-3, -3.8e-3, -3.6e-3],
    [-8e-3, -5e-3, -4.5e-3],
];

const MAX_ITERS: usize = 20;
const RESIDUAL_TOL_PX: f64 = 1e-6;

/// Radial geometry of one frame size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialFrame {
    pub center_x: f64,
    pub center_y: f64,
    /// Center-to-corner distance in pixels.
    pub corner: f64,
}

impl RadialFrame {
    pub fn new(width: usize, height: usize) -> Self {
        let cx = (width.max(1) - 1) as f64 / 2.0;
        let cy = (height.max(1) - 1) as f64 / 2.0;
        Self {
            center_x: cx,
            center_y: cy,
            corner: cx.hypot(cy),
        }
    }

    /// Division-model denominator at undistorted pixel radius `rho`.
    #[inline]
    fn denom(&self, c: &DistortionCoeffs, rho: f64) -> f64 {
        if self.corner == 0.0 {
            return 1.0;
        }
        let r2 = (rho / self.corner).powi(2);
        1.0 + r2 * (c[0] + r2 * (c[1] + r2 * c[2]))
    }

    /// Forward model: undistorted point to distorted point.
    pub fn distort_point(&self, c: &DistortionCoeffs, xu: f64, yu: f64) -> (f64, f64) {
        let (dx, dy) = (xu - self.center_x, yu - self.center_y);
        let g = self.denom(c, dx.hypot(dy));
        (self.center_x + dx / g, self.center_y + dy / g)
    }

    /// Inverts the forward model by fixed-point iteration on the radius,
    /// starting from the distorted radius. Returns `None` when the iteration
    /// fails to reach the residual tolerance within 20 steps.
    pub fn undistort_point(&self, c: &DistortionCoeffs, xd: f64, yd: f64) -> Option<(f64, f64)> {
        let (dx, dy) = (xd - self.center_x, yd - self.center_y);
        let rho_d = dx.hypot(dy);
        if rho_d == 0.0 {
            return Some((xd, yd));
        }
        let mut rho = rho_d;
        for _ in 0..MAX_ITERS {
            let g = self.denom(c, rho);
            if !(g > 0.0) {
                return None;
            }
            let next = rho_d * g;
            // damp large steps; a full step once close to the fixed point
            let step = next - rho;
            rho += if step.abs() > 0.25 * rho_d { 0.5 * step } else { step };
            let g = self.denom(c, rho);
            if g > 0.0 && (rho / g - rho_d).abs() < RESIDUAL_TOL_PX {
                let s = rho / rho_d;
                return Some((self.center_x + dx * s, self.center_y + dy * s));
            }
        }
        None
    }
}

/// Result of a warp, with the number of pixels whose inverse mapping did
/// not converge (those fall back to the identity mapping).
#[derive(Debug, Clone)]
pub struct Warped {
    pub image: Image,
    pub fallback_pixels: usize,
}

fn check_coeffs(c: &DistortionCoeffs) -> Result<()> {
    if c.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter("distortion coefficients must be finite".into()))
    }
}

fn warp(img: &Image, map: impl Fn(f64, f64) -> Option<(f64, f64)> + Sync) -> Warped {
    let (w, h) = img.dims();
    let c = img.channels();
    let rows: Vec<(Vec<f64>, usize)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * c];
            let mut fallbacks = 0;
            for x in 0..w {
                let (sx, sy) = map(x as f64, y as f64).unwrap_or_else(|| {
                    fallbacks += 1;
                    (x as f64, y as f64)
                });
                img.bilinear_sample_into(sx, sy, &mut row[x * c..(x + 1) * c]);
            }
            (row, fallbacks)
        })
        .collect();
    let fallback_pixels = rows.iter().map(|r| r.1).sum();
    let data = rows.into_iter().flat_map(|r| r.0).collect();
    Warped {
        image: Image::from_raw(w, h, c, data),
        fallback_pixels,
    }
}

/// Applies radial distortion: each output (distorted) pixel samples the
/// input at its undistorted position with bilinear interpolation and
/// clamp-to-edge. Zero coefficients return the input unchanged.
pub fn distort(img: &Image, coeffs: &DistortionCoeffs) -> Result<Warped> {
    check_coeffs(coeffs)?;
    if coeffs.iter().all(|&v| v == 0.0) {
        return Ok(Warped {
            image: img.clone(),
            fallback_pixels: 0,
        });
    }
    let frame = RadialFrame::new(img.width(), img.height());
    Ok(warp(img, |x, y| frame.undistort_point(coeffs, x, y)))
}

/// Inverse warp of [`distort`]: each output (undistorted) pixel samples
/// the distorted input through the closed-form forward model.
pub fn undistort(img: &Image, coeffs: &DistortionCoeffs) -> Result<Warped> {
    check_coeffs(coeffs)?;
    if coeffs.iter().all(|&v| v == 0.0) {
        return Ok(Warped {
            image: img.clone(),
            fallback_pixels: 0,
        });
    }
    let frame = RadialFrame::new(img.width(), img.height());
    Ok(warp(img, |x, y| {
        let (dx, dy) = frame.distort_point(coeffs, x, y);
        (dx.is_finite() && dy.is_finite()).then_some((dx, dy))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise strength; the per-pixel standard deviation is `sigma * I`.
    pub sigma: f64,
    pub seed: u64,
}

/// Identifies an independent noise field within one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NoiseKey {
    pub frame: u64,
    pub view: u64,
}

pub const VIEW_LEFT: u64 = 0;
pub const VIEW_RIGHT: u64 = 1;

/// `I + I * N` with `N ~ N(0, sigma^2)` drawn per sample from a stream
/// keyed by `(seed, frame, view)` and the sample index, clamped to `[0, 1]`.
pub fn add_signal_noise(img: &Image, cfg: &NoiseConfig, key: NoiseKey) -> Result<Image> {
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sigma {} must be >= 0", cfg.sigma)));
    }
    if cfg.sigma == 0.0 {
        return Ok(img.clone());
    }
    let stream = KeyedStream::new(&[cfg.seed, key.frame, key.view]);
    let data: Vec<f64> = img
        .data()
        .par_iter()
        .enumerate()
        .map(|(i, &v)| (v + v * cfg.sigma * stream.normal(i as u64)).clamp(0.0, 1.0))
        .collect();
    Ok(Image::from_raw(img.width(), img.height(), img.channels(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| if (x / 6 + y / 6) % 2 == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn zero_coefficients_are_identity() {
        let img = grid(33, 21);
        assert_eq!(distort(&img, &[0.0; 3]).unwrap().image, img);
        assert_eq!(undistort(&img, &[0.0; 3]).unwrap().image, img);
    }

    #[test]
    fn center_is_fixed() {
        let f = RadialFrame::new(41, 31);
        for c in PRESET_COEFFS {
            assert_eq!(f.distort_point(&c, 20.0, 15.0), (20.0, 15.0));
            assert_eq!(f.undistort_point(&c, 20.0, 15.0), Some((20.0, 15.0)));
        }
    }

    #[test]
    fn point_round_trip_all_presets() {
        let f = RadialFrame::new(160, 120);
        for c in PRESET_COEFFS {
            for (x, y) in [(0.0, 0.0), (159.0, 119.0), (10.0, 100.0), (80.0, 3.0)] {
                let (xd, yd) = f.distort_point(&c, x, y);
                let (xu, yu) = f.undistort_point(&c, xd, yd).unwrap();
                assert!((xu - x).hypot(yu - y) < 1e-5);
            }
        }
    }

    #[test]
    fn positive_coefficients_give_barrel() {
        // points move toward the center, more so farther out
        let f = RadialFrame::new(101, 101);
        let c = PRESET_COEFFS[0];
        let (x1, _) = f.distort_point(&c, 100.0, 50.0);
        let (x2, _) = f.distort_point(&c, 75.0, 50.0);
        assert!(x1 < 100.0 && x2 < 75.0);
        assert!(100.0 - x1 > 75.0 - x2);
        let (xp, _) = f.distort_point(&PRESET_COEFFS[4], 100.0, 50.0);
        assert!(xp > 100.0);
    }

    #[test]
    fn first_order_displacement() {
        // x_d - x_u ~ -c1 R^2 rho for small c1
        let f = RadialFrame::new(201, 201);
        let c1 = 1e-4;
        let rho = 0.5 * f.corner;
        let (xd, _) = f.distort_point(&[c1, 0.0, 0.0], 100.0 + rho, 100.0);
        let disp = xd - (100.0 + rho);
        let oracle = -c1 * 0.25 * rho;
        assert!((disp - oracle).abs() < 1e-3 * oracle.abs());
    }

    #[test]
    fn radially_symmetric_on_square_frames() {
        let img = Image::from_fn(48, 48, |x, y| ((x * 5 + y * 11) % 17) as f64 / 16.0);
        let c = PRESET_COEFFS[1];
        let a = distort(&img.rotate90(), &c).unwrap().image;
        let b = distort(&img, &c).unwrap().image.rotate90();
        let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-3, "{diff}");
    }

    #[test]
    fn divergence_falls_back_to_identity() {
        let f = RadialFrame::new(64, 64);
        let c = [-2.0, 0.0, 0.0];
        assert!(f.undistort_point(&c, 63.0, 63.0).is_none());
        let img = grid(64, 64);
        let out = distort(&img, &c).unwrap();
        assert!(out.fallback_pixels > 0);
        assert_eq!(out.image.get(63, 63, 0), img.get(63, 63, 0));
        assert!(distort(&img, &[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn noise_zero_sigma_and_black() {
        let img = grid(20, 20);
        let key = NoiseKey::default();
        let same = add_signal_noise(&img, &NoiseConfig { sigma: 0.0, seed: 1 }, key).unwrap();
        assert_eq!(same, img);
        let black = Image::zeros(20, 20, 3).unwrap();
        let noisy = add_signal_noise(&black, &NoiseConfig { sigma: 0.5, seed: 1 }, key).unwrap();
        assert_eq!(noisy, black);
        assert!(add_signal_noise(&img, &NoiseConfig { sigma: -0.1, seed: 1 }, key).is_err());
    }

    #[test]
    fn noise_is_reproducible_and_view_keyed() {
        let img = Image::filled(64, 64, 1, 0.5).unwrap();
        let cfg = NoiseConfig { sigma: 0.2, seed: 99 };
        let l = NoiseKey { frame: 3, view: VIEW_LEFT };
        let r = NoiseKey { frame: 3, view: VIEW_RIGHT };
        let a = add_signal_noise(&img, &cfg, l).unwrap();
        let b = add_signal_noise(&img, &cfg, l).unwrap();
        let c = add_signal_noise(&img, &cfg, r).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
