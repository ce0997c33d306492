//! Non-blind PSF estimation by monotone accelerated proximal gradient.
//!
//! Minimizes `F(E) = |S*E - B|_W^2 + lambda * sum(E)` over `E >= 0`, where
//! the residual is taken over the "valid" region (every output pixel sees
//! the full kernel support inside `S`) and `|r|_W^2 = |r|^2 + sum_i |D_i r|^2`
//! over the derivative set. On the nonnegative orthant `sum(E)` is the L1
//! norm, so the proximal step is a shift followed by projection.

use rustfft::num_complex::Complex;

use super::derivative::DerivativeSet;
use crate::error::{Error, Result};
use crate::imgcore::conv::{fast_len, Fft2d};
use crate::imgcore::{Image, Kernel2D};

/// L1 weight relative to the objective at `E = 0`.
pub const DEFAULT_L1_WEIGHT: f64 = 1e-3;

const REL_TOL: f64 = 1e-8;
const POWER_ITERS: usize = 40;

#[derive(Debug, Clone)]
pub struct PsfEstimate {
    pub kernel: Kernel2D,
    /// Final objective value.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration; nonincreasing.
    pub history: Vec<f64>,
}

struct Problem {
    fft: Fft2d,
    nw: usize,
    nh: usize,
    s_hat: Vec<Complex<f64>>,
    ksize: usize,
    /// Valid region size.
    vw: usize,
    vh: usize,
    b: Vec<f64>,
    derivs: DerivativeSet,
}

impl Problem {
    fn new(sharp: &Image, blurred: &Image, ksize: usize) -> Self {
        let (w, h) = sharp.dims();
        let (nw, nh) = (fast_len(w), fast_len(h));
        let fft = Fft2d::new(nw, nh);
        let mut s_hat = vec![Complex::new(0.0, 0.0); nw * nh];
        for y in 0..h {
            for x in 0..w {
                s_hat[y * nw + x].re = sharp.get(x, y, 0);
            }
        }
        fft.forward(&mut s_hat);
        let half = ksize / 2;
        let (vw, vh) = (w - ksize + 1, h - ksize + 1);
        let mut b = Vec::with_capacity(vw * vh);
        for y in 0..vh {
            for x in 0..vw {
                b.push(blurred.get(x + half, y + half, 0));
            }
        }
        Self { fft, nw, nh, s_hat, ksize, vw, vh, b, derivs: DerivativeSet::new() }
    }

    fn wrap(&self, off: isize, n: usize) -> usize {
        off.rem_euclid(n as isize) as usize
    }

    /// Valid part of `S * E`.
    fn forward(&self, e: &[f64]) -> Vec<f64> {
        let k = self.ksize;
        let half = (k / 2) as isize;
        let mut buf = vec![Complex::new(0.0, 0.0); self.nw * self.nh];
        for v in 0..k {
            for u in 0..k {
                let x = self.wrap(u as isize - half, self.nw);
                let y = self.wrap(v as isize - half, self.nh);
                buf[y * self.nw + x].re = e[v * k + u];
            }
        }
        self.fft.forward(&mut buf);
        for (a, s) in buf.iter_mut().zip(&self.s_hat) {
            *a *= s;
        }
        self.fft.inverse(&mut buf);
        let mut out = Vec::with_capacity(self.vw * self.vh);
        for y in 0..self.vh {
            for x in 0..self.vw {
                out.push(buf[(y + k / 2) * self.nw + x + k / 2].re);
            }
        }
        out
    }

    /// Adjoint of [`Problem::forward`].
    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let k = self.ksize;
        let half = (k / 2) as isize;
        let mut buf = vec![Complex::new(0.0, 0.0); self.nw * self.nh];
        for y in 0..self.vh {
            for x in 0..self.vw {
                buf[(y + k / 2) * self.nw + x + k / 2].re = g[y * self.vw + x];
            }
        }
        self.fft.forward(&mut buf);
        for (a, s) in buf.iter_mut().zip(&self.s_hat) {
            *a *= s.conj();
        }
        self.fft.inverse(&mut buf);
        let mut out = vec![0.0; k * k];
        for v in 0..k {
            for u in 0..k {
                let x = self.wrap(u as isize - half, self.nw);
                let y = self.wrap(v as isize - half, self.nh);
                out[v * k + u] = buf[y * self.nw + x].re;
            }
        }
        out
    }

    fn residual(&self, e: &[f64]) -> Vec<f64> {
        let mut r = self.forward(e);
        for (a, b) in r.iter_mut().zip(&self.b) {
            *a -= b;
        }
        r
    }

    /// Smooth term only.
    fn smooth(&self, e: &[f64]) -> f64 {
        self.derivs.energy(&self.residual(e), self.vw, self.vh)
    }

    /// Smooth term and its gradient.
    fn smooth_grad(&self, e: &[f64]) -> (f64, Vec<f64>) {
        let (value, wr) = self.derivs.weighted(&self.residual(e), self.vw, self.vh);
        let mut g = self.adjoint(&wr);
        for v in &mut g {
            *v *= 2.0;
        }
        (value, g)
    }

    /// Largest eigenvalue of the Hessian `2 A^T W A`, by power iteration.
    fn lipschitz(&self) -> f64 {
        let n = self.ksize * self.ksize;
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERS {
            let (_, wr) = self.derivs.weighted(&self.forward(&v), self.vw, self.vh);
            let hv: Vec<f64> = self.adjoint(&wr).into_iter().map(|x| 2.0 * x).collect();
            let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = hv.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Estimates a `kernel_size` PSF mapping `sharp` to `blurred`.
///
/// `l1_weight` is relative: the effective weight is `l1_weight` times the
/// objective at `E = 0`. The step size starts from a power-iteration bound
/// and doubles whenever the quadratic upper bound fails. When a step does
/// not lower the objective the previous iterate is kept, so the recorded
/// objective never increases. Stops after `max_iters` or once an accepted
/// step changes the objective by less than `1e-8` relatively; in the first
/// case `converged` is false and the best iterate is returned.
pub fn estimate_psf(
    sharp: &Image,
    blurred: &Image,
    kernel_size: usize,
    l1_weight: f64,
    max_iters: usize,
) -> Result<PsfEstimate> {
    sharp.ensure_same_shape(blurred)?;
    if sharp.channels() != 1 {
        return Err(Error::UnsupportedChannels(sharp.channels()));
    }
    if kernel_size % 2 == 0 {
        return Err(Error::InvalidParameter(format!("kernel size {kernel_size} must be odd")));
    }
    let (w, h) = sharp.dims();
    if kernel_size > w || kernel_size > h {
        return Err(Error::InvalidParameter(format!(
            "kernel size {kernel_size} exceeds the {w}x{h} patch"
        )));
    }
    if !(l1_weight >= 0.0 && l1_weight.is_finite()) {
        return Err(Error::InvalidParameter(format!("l1 weight {l1_weight} must be >= 0")));
    }

    let p = Problem::new(sharp, blurred, kernel_size);
    let n = kernel_size * kernel_size;
    let mut x = vec![0.0; n];
    let f0 = p.smooth(&x);
    let lambda = l1_weight * f0;
    let objective = |e: &[f64], smooth: f64| smooth + lambda * e.iter().sum::<f64>();
    let mut fx = f0;
    let mut history = Vec::new();
    if f0 == 0.0 {
        return Ok(PsfEstimate {
            kernel: Kernel2D::from_raw(kernel_size, x),
            residual: 0.0,
            iterations: 0,
            converged: true,
            history,
        });
    }

    let mut lip = p.lipschitz().max(f64::MIN_POSITIVE);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let (fy, g) = p.smooth_grad(&y);
        let (z, fz_smooth) = loop {
            let z: Vec<f64> = y
                .iter()
                .zip(&g)
                .map(|(yi, gi)| (yi - (gi + lambda) / lip).max(0.0))
                .collect();
            let fz = p.smooth(&z);
            let d: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
            let bound = fy + dot(&g, &d) + 0.5 * lip * dot(&d, &d);
            if fz <= bound + 1e-12 * fy.abs().max(1e-300) {
                break (z, fz);
            }
            lip *= 2.0;
        };
        let fz = objective(&z, fz_smooth);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let accepted = fz <= fx;
        let x_next = if accepted { z.clone() } else { x.clone() };
        y = (0..n)
            .map(|i| x_next[i] + (t / t_next) * (z[i] - x_next[i]) + ((t - 1.0) / t_next) * (x_next[i] - x[i]))
            .collect();
        let f_next = if accepted { fz } else { fx };
        let rel = (fx - f_next) / fx.abs().max(f64::MIN_POSITIVE);
        x = x_next;
        fx = f_next;
        t = t_next;
        history.push(fx);
        if accepted && (rel < REL_TOL || fx == 0.0) {
            converged = true;
            break;
        }
    }
    Ok(PsfEstimate {
        kernel: Kernel2D::from_raw(kernel_size, x),
        residual: fx,
        iterations,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{make_disk_pattern, GridSpec};
    use crate::imgcore::conv::convolve_direct;
    use crate::metrics::ncc_kernels;
    use crate::psfbank::disk_coverage;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let s = crate::rng::KeyedStream::new(&[seed]);
        Image::from_vec(w, h, 1, (0..w * h).map(|i| s.uniform(i as u64)).collect()).unwrap()
    }

    /// Direct-loop valid convolution.
    fn naive_valid(s: &Image, e: &[f64], k: usize) -> Vec<f64> {
        let (w, h) = s.dims();
        let half = (k / 2) as isize;
        let mut out = Vec::new();
        for y in half..h as isize - half {
            for x in half..w as isize - half {
                let mut acc = 0.0;
                for v in -half..=half {
                    for u in -half..=half {
                        acc += e[((v + half) as usize) * k + (u + half) as usize]
                            * s.get((x - u) as usize, (y - v) as usize, 0);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn fft_operators_match_direct_loops() {
        let s = noise(23, 19, 1);
        let p = Problem::new(&s, &s, 7);
        let e: Vec<f64> = (0..49).map(|i| ((i * 13 % 7) as f64) / 7.0).collect();
        let fwd = p.forward(&e);
        let naive = naive_valid(&s, &e, 7);
        assert_eq!(fwd.len(), naive.len());
        for (a, b) in fwd.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-10);
        }
        // adjoint identity <A e, g> = <e, A^T g>
        let g: Vec<f64> = (0..fwd.len()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let lhs = dot(&fwd, &g);
        let rhs = dot(&e, &p.adjoint(&g));
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn identity_blur_gives_delta() {
        let s = noise(40, 40, 2);
        let est = estimate_psf(&s, &s, 9, 1e-4, 2000).unwrap();
        let k = &est.kernel;
        assert!(k.center() > 0.9, "center {}", k.center());
        assert!(k.sum() - k.center() < 0.1);
        assert!(k.min() >= 0.0);
    }

    #[test]
    fn zero_inputs_give_zero_kernel() {
        let z = Image::zeros(16, 16, 1).unwrap();
        let est = estimate_psf(&z, &z, 5, DEFAULT_L1_WEIGHT, 100).unwrap();
        assert_eq!(est.residual, 0.0);
        assert!(est.kernel.taps().iter().all(|&v| v == 0.0));
        assert!(est.converged);
    }

    #[test]
    fn recovers_disk_and_objective_is_monotone() {
        let g = GridSpec { rows: 2, cols: 2, spacing: 24.0, width: 48, height: 48 };
        let s = make_disk_pattern(&g, 2.0).unwrap();
        let disk = disk_coverage(11, 3.5).unwrap();
        let disk = disk.normalized_to(1.0);
        let b = Image::from_vec(48, 48, 1, convolve_direct(s.data(), 48, 48, &disk)).unwrap();
        let est = estimate_psf(&s, &b, 15, 1e-5, 3000).unwrap();
        assert!(est.kernel.min() >= 0.0);
        for pair in est.history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        let ncc = ncc_kernels(&est.kernel, &disk);
        assert!(ncc > 0.98, "ncc {ncc}");
    }

    #[test]
    fn rejects_bad_input() {
        let s = noise(16, 16, 3);
        assert!(estimate_psf(&s, &s, 4, 0.0, 10).is_err());
        assert!(estimate_psf(&s, &s, 17, 0.0, 10).is_err());
        assert!(estimate_psf(&s, &noise(15, 16, 3), 5, 0.0, 10).is_err());
        let rgb = Image::zeros(16, 16, 3).unwrap();
        assert!(estimate_psf(&rgb, &rgb, 5, 0.0, 10).is_err());
    }
}
