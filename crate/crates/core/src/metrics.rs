//! Image-quality metrics: PSNR, SSIM, MAE, zero-lag normalized
//! cross-correlation, and the multi-scale Sobel edge loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{Image, Kernel2D};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64)
}

/// `10 log10(1 / MSE)` for `[0, 1]` images, capped at `cap_db`.
pub fn psnr(a: &Image, b: &Image, cap_db: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(cap_db);
    }
    Ok((10.0 * (1.0 / m).log10()).min(cap_db))
}

/// Mean absolute difference over all samples.
pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-half..=half)
        .map(|t| (-((t * t) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(w - n + 1) x (h - n + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, a)| a * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5) on the
/// channel-mean image, with `C1 = 0.01^2` and `C2 = 0.03^2`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let x = a.to_gray().into_data();
    let y = b.to_gray().into_data();
    let g = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, w, h, &g);
    let my = filter_valid(&y, w, h, &g);
    let sxx = filter_valid(&xx, w, h, &g);
    let syy = filter_valid(&yy, w, h, &g);
    let sxy = filter_valid(&xy, w, h, &g);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Zero-mean normalized cross-correlation at zero lag. When either input
/// has zero variance the score is 1 if both are constant and equal, else 0.
pub fn ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let const_a = a.iter().all(|&v| v == a[0]);
    let const_b = b.iter().all(|&v| v == b[0]);
    if const_a || const_b {
        return Ok(if const_a && const_b && a[0] == b[0] { 1.0 } else { 0.0 });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn ncc2d(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    ncc(a.data(), b.data())
}

/// NCC between two kernels after embedding them on a common canvas.
pub fn ncc_kernels(a: &Kernel2D, b: &Kernel2D) -> f64 {
    let size = a.size().max(b.size());
    ncc(a.embed(size).taps(), b.embed(size).taps()).expect("equal sizes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLossConfig {
    /// Odd Sobel operator sizes, each >= 3.
    pub scales: Vec<usize>,
    pub lambda_x: f64,
    pub lambda_y: f64,
}

impl Default for EdgeLossConfig {
    fn default() -> Self {
        Self {
            scales: vec![3, 7, 11],
            lambda_x: 0.03,
            lambda_y: 0.02,
        }
    }
}

impl EdgeLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidParameter("edge loss needs at least one scale".into()));
        }
        if let Some(m) = self.scales.iter().find(|&&m| m < 3 || m % 2 == 0) {
            return Err(Error::InvalidParameter(format!("Sobel size {m} must be odd and >= 3")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLoss {
    pub total: f64,
    pub mse: f64,
    pub x: f64,
    pub y: f64,
}

fn convolve_1d_full(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Horizontal-derivative Sobel operator of side `m`.
///
/// The 3x3 Sobel (derivative `[1, 0, -1]` along x, smoothing `[1, 2, 1]`
/// along y) is grown by convolving both factors with `[1, 2, 1]` until it
/// reaches `m x m`, then scaled so convolving the ramp `I(x, y) = x` gives 1.
/// The vertical operator is its transpose.
pub fn sobel_x(m: usize) -> Result<Kernel2D> {
    if m < 3 || m % 2 == 0 {
        return Err(Error::InvalidParameter(format!("Sobel size {m} must be odd and >= 3")));
    }
    let mut deriv = vec![1.0, 0.0, -1.0];
    let mut smooth = vec![1.0, 2.0, 1.0];
    while deriv.len() < m {
        deriv = convolve_1d_full(&deriv, &[1.0, 2.0, 1.0]);
        smooth = convolve_1d_full(&smooth, &[1.0, 2.0, 1.0]);
    }
    // out(x) = sum_u k(u) I(x - u); for I = x that is -sum_u u k(u)
    let half = (m / 2) as f64;
    let ramp: f64 = -deriv.iter().enumerate().map(|(i, d)| (i as f64 - half) * d).sum::<f64>();
    let ssum: f64 = smooth.iter().sum();
    let scale = 1.0 / (ramp * ssum);
    let mut taps = Vec::with_capacity(m * m);
    for s in &smooth {
        for d in &deriv {
            taps.push(d * s * scale);
        }
    }
    Kernel2D::new(m, taps)
}

/// Convolution with an operator odd in x (`k(-u, v) = -k(u, v)`), with
/// clamp-to-edge borders. Pairing mirrored taps makes a constant input give
/// exactly zero.
fn convolve_odd_x(src: &[f64], w: usize, h: usize, k: &Kernel2D) -> Vec<f64> {
    let half = k.half() as isize;
    let (wi, hi) = (w as isize, h as isize);
    let at = |x: isize, y: isize| src[(y.clamp(0, hi - 1) * wi + x.clamp(0, wi - 1)) as usize];
    let mut out = vec![0.0; w * h];
    for y in 0..hi {
        for x in 0..wi {
            let mut acc = 0.0;
            for v in -half..=half {
                for u in 1..=half {
                    let wt = k.at_offset(u, v);
                    if wt != 0.0 {
                        acc += wt * (at(x - u, y - v) - at(x + u, y - v));
                    }
                }
            }
            out[(y * wi + x) as usize] = acc;
        }
    }
    out
}

fn transpose_plane(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

/// Sobel response of one plane; the y operator runs as the x operator on
/// the transposed plane.
fn gradient(plane: &[f64], w: usize, h: usize, sx: &Kernel2D, vertical: bool) -> Vec<f64> {
    if vertical {
        let t = transpose_plane(plane, w, h);
        transpose_plane(&convolve_odd_x(&t, h, w, sx), h, w)
    } else {
        convolve_odd_x(plane, w, h, sx)
    }
}

/// Multi-scale Sobel edge loss. Per scale and direction, the MSE between
/// gradient maps of `out` and `gt`; each direction averages over scales,
/// and `total = mse + lambda_x * x + lambda_y * y`. Channels are averaged.
pub fn edge_loss(out: &Image, gt: &Image, cfg: &EdgeLossConfig) -> Result<EdgeLoss> {
    out.ensure_same_shape(gt)?;
    cfg.validate()?;
    let (w, h) = out.dims();
    let base = mse(out, gt)?;
    let mut lx = 0.0;
    let mut ly = 0.0;
    for &m in &cfg.scales {
        let sx = sobel_x(m)?;
        for c in 0..out.channels() {
            let po = out.channel(c);
            let pg = gt.channel(c);
            for (vertical, acc) in [(false, &mut lx), (true, &mut ly)] {
                let go = gradient(&po, w, h, &sx, vertical);
                let gg = gradient(&pg, w, h, &sx, vertical);
                let e = go.iter().zip(&gg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (w * h) as f64;
                *acc += e;
            }
        }
    }
    let denom = (cfg.scales.len() * out.channels()) as f64;
    lx /= denom;
    ly /= denom;
    Ok(EdgeLoss {
        total: base + cfg.lambda_x * lx + cfg.lambda_y * ly,
        mse: base,
        x: lx,
        y: ly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise_img(w: usize, h: usize, seed: u64) -> Image {
        let s = crate::rng::KeyedStream::new(&[seed]);
        let data = (0..w * h).map(|i| s.uniform(i as u64)).collect();
        Image::from_vec(w, h, 1, data).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(8, 8, 3, 0.3).unwrap();
        assert_eq!(psnr(&a, &a, PSNR_CAP_DB).unwrap(), 100.0);
        let b = Image::filled(8, 8, 3, 0.4).unwrap();
        assert!((psnr(&a, &b, PSNR_CAP_DB).unwrap() - 20.0).abs() < 1e-9);
        let zero = Image::zeros(4, 4, 1).unwrap();
        let one = Image::filled(4, 4, 1, 1.0).unwrap();
        assert_eq!(psnr(&zero, &one, PSNR_CAP_DB).unwrap(), 0.0);
        assert!(psnr(&zero, &a, PSNR_CAP_DB).is_err());
    }

    #[test]
    fn mae_matches_loop() {
        let a = noise_img(13, 7, 1);
        let b = noise_img(13, 7, 2);
        let mut acc = 0.0;
        for i in 0..a.data().len() {
            acc += (a.data()[i] - b.data()[i]).abs();
        }
        assert_eq!(mae(&a, &b).unwrap(), acc / a.data().len() as f64);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let c = a.map(|v| v + 0.05);
        assert!((mae(&a, &c).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ssim_extremes() {
        let a = noise_img(64, 64, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.0);
        assert!(ssim(&Image::zeros(10, 20, 1).unwrap(), &Image::zeros(10, 20, 1).unwrap()).is_err());
    }

    #[test]
    fn ssim_independent_noise_near_zero() {
        let a = noise_img(256, 256, 4).map(|v| v - 0.5 + 0.5);
        let b = noise_img(256, 256, 5);
        assert!(ssim(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn ncc_extremes() {
        let a = noise_img(9, 9, 6);
        assert!((ncc2d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!((ncc2d(&a, &inv).unwrap() + 1.0).abs() < 1e-12);
        let c = Image::filled(9, 9, 1, 0.2).unwrap();
        assert_eq!(ncc2d(&c, &c).unwrap(), 1.0);
        assert_eq!(ncc2d(&c, &a).unwrap(), 0.0);
        assert_eq!(ncc2d(&c, &Image::filled(9, 9, 1, 0.3).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn sobel_ramp_normalization_and_constant() {
        let ramp = Image::from_fn(40, 40, |x, _| x as f64 * 0.01);
        let flat = Image::filled(40, 40, 1, 0.37).unwrap();
        for m in [3, 7, 11] {
            let k = sobel_x(m).unwrap();
            assert!(k.sum().abs() < 1e-15);
            let g = gradient(ramp.data(), 40, 40, &k, false);
            assert!((g[20 * 40 + 20] - 0.01).abs() < 1e-12);
            let z = gradient(flat.data(), 40, 40, &k, false);
            assert!(z.iter().all(|&v| v == 0.0));
            let zy = gradient(flat.data(), 40, 40, &k, true);
            assert!(zy.iter().all(|&v| v == 0.0));
        }
        assert_eq!(sobel_x(3).unwrap().taps(), sobel_x(3).unwrap().taps());
        assert!(sobel_x(4).is_err());
    }

    #[test]
    fn sobel3_matches_classic_taps() {
        let k = sobel_x(3).unwrap();
        let classic = [1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0];
        for (t, c) in k.taps().iter().zip(classic) {
            assert!((t - c / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_scale_matches_naive_loop() {
        let out = noise_img(20, 16, 7);
        let gt = noise_img(20, 16, 8);
        let cfg = EdgeLossConfig {
            scales: vec![3],
            lambda_x: 0.03,
            lambda_y: 0.02,
        };
        let got = edge_loss(&out, &gt, &cfg).unwrap();
        // naive clamp-to-edge 3x3 Sobel with the classic taps / 8
        let gx = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
        let naive = |img: &Image, tr: bool| {
            let (w, h) = (img.width() as isize, img.height() as isize);
            let mut v = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for j in 0..3isize {
                        for i in 0..3isize {
                            let t = if tr { gx[i as usize][j as usize] } else { gx[j as usize][i as usize] };
                            let sx = (x - (i - 1)).clamp(0, w - 1) as usize;
                            let sy = (y - (j - 1)).clamp(0, h - 1) as usize;
                            acc += t / 8.0 * img.get(sx, sy, 0);
                        }
                    }
                    v.push(acc);
                }
            }
            v
        };
        let m = |a: Vec<f64>, b: Vec<f64>| {
            a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
        };
        let lx = m(naive(&out, false), naive(&gt, false));
        let ly = m(naive(&out, true), naive(&gt, true));
        assert!((got.x - lx).abs() < 1e-12);
        assert!((got.y - ly).abs() < 1e-12);
        let base = mse(&out, &gt).unwrap();
        assert!((got.total - (base + 0.03 * lx + 0.02 * ly)).abs() < 1e-12);
    }

    #[test]
    fn vertical_edge_is_x_only() {
        let gt = Image::from_fn(32, 24, |x, _| if x < 16 { 0.1 } else { 0.9 });
        let blurred = Image::from_fn(32, 24, |x, _| {
            let t = ((x as f64 - 15.5) / 3.0).clamp(-1.0, 1.0);
            0.5 + 0.4 * t
        });
        let l = edge_loss(&blurred, &gt, &EdgeLossConfig::default()).unwrap();
        assert!(l.x > 0.0);
        assert_eq!(l.y, 0.0);
        let same = edge_loss(&gt, &gt, &EdgeLossConfig::default()).unwrap();
        assert_eq!((same.total, same.mse, same.x, same.y), (0.0, 0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn psnr_mae_permutation_invariant(
            a in prop::collection::vec(0.0f64..1.0, 16),
            b in prop::collection::vec(0.0f64..1.0, 16),
            rot in 0usize..16,
        ) {
            let ia = Image::from_vec(4, 4, 1, a.clone()).unwrap();
            let ib = Image::from_vec(4, 4, 1, b.clone()).unwrap();
            let mut pa = a; pa.rotate_left(rot);
            let mut pb = b; pb.rotate_left(rot);
            let ja = Image::from_vec(4, 4, 1, pa).unwrap();
            let jb = Image::from_vec(4, 4, 1, pb).unwrap();
            prop_assert!((mae(&ia, &ib).unwrap() - mae(&ja, &jb).unwrap()).abs() < 1e-12);
            prop_assert!((psnr(&ia, &ib, 100.0).unwrap() - psnr(&ja, &jb, 100.0).unwrap()).abs() < 1e-9);
            prop_assert!((ncc2d(&ia, &ib).unwrap() - ncc2d(&ib, &ia).unwrap()).abs() < 1e-12);
        }
    }
}
