//! Zero-padded "same" 2D convolution, direct or FFT-based.
//!
//! `out(x, y) = sum_{u,v} k(u, v) * src(x - u, y - v)` with `(u, v)` offsets
//! from the kernel center, so convolving a unit impulse stamps the kernel
//! unflipped. Samples outside the source are zero.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Image, Kernel2D};

/// Kernels up to this side length use direct convolution.
pub const DIRECT_MAX_SIDE: usize = 15;

/// Convolves one plane, choosing the direct or FFT route by kernel size.
pub fn convolve_plane(src: &[f64], width: usize, height: usize, kernel: &Kernel2D) -> Vec<f64> {
    if kernel.size() <= DIRECT_MAX_SIDE {
        convolve_direct(src, width, height, kernel)
    } else {
        convolve_fft(src, width, height, kernel)
    }
}

/// Convolves every channel of `img` with `kernel`.
pub fn convolve_image(img: &Image, kernel: &Kernel2D) -> Image {
    let (w, h) = img.dims();
    let planes: Vec<Vec<f64>> = (0..img.channels()).map(|c| img.channel(c)).collect();
    let refs: Vec<&[f64]> = planes.iter().map(Vec::as_slice).collect();
    let mut out = convolve_planes(&refs, w, h, &[kernel]);
    Image::from_planes(w, h, &out.remove(0)).expect("plane count preserved")
}

pub fn convolve_direct(src: &[f64], width: usize, height: usize, kernel: &Kernel2D) -> Vec<f64> {
    assert_eq!(src.len(), width * height);
    let mut out = vec![0.0; width * height];
    let ks = kernel.size();
    let half = (ks / 2) as isize;
    let (w, h) = (width as isize, height as isize);
    for y in 0..h {
        let orow = &mut out[(y * w) as usize..((y + 1) * w) as usize];
        for j in 0..ks as isize {
            let sy = y + half - j;
            if sy < 0 || sy >= h {
                continue;
            }
            let srow = &src[(sy * w) as usize..((sy + 1) * w) as usize];
            for i in 0..ks as isize {
                let wt = kernel.get(i as usize, j as usize);
                if wt == 0.0 {
                    continue;
                }
                // sx = x + half - i must lie in [0, w)
                let shift = half - i;
                let x0 = (-shift).max(0);
                let x1 = (w - shift).min(w);
                if x0 >= x1 {
                    continue;
                }
                let o = &mut orow[x0 as usize..x1 as usize];
                let s = &srow[(x0 + shift) as usize..(x1 + shift) as usize];
                for (ov, sv) in o.iter_mut().zip(s) {
                    *ov += wt * sv;
                }
            }
        }
    }
    out
}

pub fn convolve_fft(src: &[f64], width: usize, height: usize, kernel: &Kernel2D) -> Vec<f64> {
    let mut out = fft_convolve_many(&[src], width, height, &[kernel]);
    out.pop().and_then(|mut v| v.pop()).expect("one output")
}

/// Convolves every plane with every kernel; `out[k][p]` is plane `p` blurred
/// by kernel `k`. Uses one FFT route for the whole batch when any kernel is
/// larger than [`DIRECT_MAX_SIDE`].
pub fn convolve_planes(
    planes: &[&[f64]],
    width: usize,
    height: usize,
    kernels: &[&Kernel2D],
) -> Vec<Vec<Vec<f64>>> {
    let max_side = kernels.iter().map(|k| k.size()).max().unwrap_or(1);
    if max_side <= DIRECT_MAX_SIDE {
        kernels
            .iter()
            .map(|k| planes.iter().map(|p| convolve_direct(p, width, height, k)).collect())
            .collect()
    } else {
        fft_convolve_many(planes, width, height, kernels)
    }
}

/// 2D FFT plan over a `width x height` complex canvas.
pub(crate) struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub(crate) fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    /// Forward transform; the spectrum is left transposed (height-major rows).
    pub(crate) fn forward(&self, buf: &mut Vec<Complex<f64>>) {
        self.row_fwd.process(buf);
        let mut t = transpose(buf, self.width, self.height);
        self.col_fwd.process(&mut t);
        *buf = t;
    }

    /// Inverse of [`Fft2d::forward`], including the 1/N scale.
    pub(crate) fn inverse(&self, buf: &mut Vec<Complex<f64>>) {
        self.col_inv.process(buf);
        let mut t = transpose(buf, self.height, self.width);
        self.row_inv.process(&mut t);
        let scale = 1.0 / (self.width * self.height) as f64;
        for v in &mut t {
            *v *= scale;
        }
        *buf = t;
    }
}

fn transpose(buf: &[Complex<f64>], width: usize, height: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); buf.len()];
    const B: usize = 32;
    for yb in (0..height).step_by(B) {
        for xb in (0..width).step_by(B) {
            for y in yb..(yb + B).min(height) {
                for x in xb..(xb + B).min(width) {
                    out[x * height + y] = buf[y * width + x];
                }
            }
        }
    }
    out
}

/// Smallest n' >= n whose only prime factors are 2, 3 and 5.
pub(crate) fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn fft_convolve_many(
    planes: &[&[f64]],
    width: usize,
    height: usize,
    kernels: &[&Kernel2D],
) -> Vec<Vec<Vec<f64>>> {
    let ks = kernels.iter().map(|k| k.size()).max().unwrap_or(1);
    let cw = fast_len(width + ks - 1);
    let ch = fast_len(height + ks - 1);
    let plan = Fft2d::new(cw, ch);
    let zero = Complex::new(0.0, 0.0);

    // Two real planes ride in one complex transform (real and imaginary parts);
    // a real kernel keeps them separable after the inverse.
    let packed: Vec<Vec<Complex<f64>>> = planes
        .chunks(2)
        .map(|pair| {
            let mut buf = vec![zero; cw * ch];
            for y in 0..height {
                for x in 0..width {
                    let re = pair[0][y * width + x];
                    let im = pair.get(1).map_or(0.0, |p| p[y * width + x]);
                    buf[y * cw + x] = Complex::new(re, im);
                }
            }
            plan.forward(&mut buf);
            buf
        })
        .collect();

    kernels
        .iter()
        .map(|k| {
            let kside = k.size();
            // Center the kernel's offset range inside the shared canvas so a
            // single crop offset serves every kernel in the batch.
            let off = (ks - kside) / 2;
            let mut kb = vec![zero; cw * ch];
            for j in 0..kside {
                for i in 0..kside {
                    kb[(j + off) * cw + i + off] = Complex::new(k.get(i, j), 0.0);
                }
            }
            plan.forward(&mut kb);
            let half = ks / 2;
            let mut outs = Vec::with_capacity(planes.len());
            for (pi, spec) in packed.iter().enumerate() {
                let mut prod: Vec<Complex<f64>> =
                    spec.iter().zip(&kb).map(|(a, b)| a * b).collect();
                plan.inverse(&mut prod);
                let mut re = vec![0.0; width * height];
                let mut im = vec![0.0; width * height];
                for y in 0..height {
                    for x in 0..width {
                        let v = prod[(y + half) * cw + x + half];
                        re[y * width + x] = v.re;
                        im[y * width + x] = v.im;
                    }
                }
                outs.push(re);
                if 2 * pi + 1 < planes.len() {
                    outs.push(im);
                }
            }
            outs
        })
        .collect()
}
