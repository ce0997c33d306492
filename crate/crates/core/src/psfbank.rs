//! Parametric dual-pixel PSF model and banks of representative PSFs.
//!
//! The combined PSF is a disk of the CoC radius weighted by a Butterworth
//! profile rescaled to `[beta, 1]` (the donut-shaped center depletion),
//! smoothed by a Gaussian of standard deviation `kappa * |r|` and normalized
//! to unit mass. The left PSF is the combined PSF times a horizontal ramp;
//! the right PSF is the left one mirrored about the vertical axis.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Kernel2D;

/// CoC radii below this many pixels render as a delta PSF.
pub const IN_FOCUS_RADIUS: f64 = 0.5;

/// Bank radius keys are quantized to this step in pixels.
pub const RADIUS_STEP: f64 = 0.5;

const DISK_SUPERSAMPLE: usize = 4;

/// PSF shape parameters shared by every radius of one lens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfShape {
    /// Butterworth order.
    pub n: u32,
    /// Cutoff scale, `D_o = alpha * |r|`.
    pub alpha: f64,
    /// Center-depletion floor in `(0, 1]`.
    pub beta: f64,
    /// Gaussian smoothing factor; sigma = `kappa * |r|`.
    pub kappa: f64,
}

impl PsfShape {
    pub fn new(n: u32, alpha: f64, beta: f64, kappa: f64) -> Self {
        Self { n, alpha, beta, kappa }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("Butterworth order n must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha {} must be > 0", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParameter(format!("beta {} must be in (0, 1]", self.beta)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidParameter(format!("kappa {} must be in (0, 1)", self.kappa)));
        }
        Ok(())
    }

    pub fn at_radius(self, radius: f64) -> PsfParams {
        PsfParams { shape: self, radius }
    }
}

/// A shape evaluated at one signed CoC radius (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfParams {
    #[serde(flatten)]
    pub shape: PsfShape,
    pub radius: f64,
}

impl PsfParams {
    pub fn new(n: u32, alpha: f64, beta: f64, kappa: f64, radius: f64) -> Self {
        PsfShape::new(n, alpha, beta, kappa).at_radius(radius)
    }

    pub fn in_focus(&self) -> bool {
        self.radius.abs() < IN_FOCUS_RADIUS
    }
}

/// Which side of the focal plane a point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusSide {
    /// Behind the focal plane (positive radius).
    Front,
    /// In front of the focal plane (negative radius).
    Back,
}

impl FocusSide {
    pub fn of_radius(radius: f64) -> Self {
        if radius < 0.0 {
            FocusSide::Back
        } else {
            FocusSide::Front
        }
    }

    fn sign(self) -> f64 {
        match self {
            FocusSide::Front => 1.0,
            FocusSide::Back => -1.0,
        }
    }
}

/// Kernel side length for a radius: `2 * ceil(|r| (1 + 3 kappa)) + 1`, or 1
/// when in focus.
pub fn kernel_side(radius: f64, kappa: f64) -> usize {
    let r = radius.abs();
    if r < IN_FOCUS_RADIUS {
        1
    } else {
        2 * (r * (1.0 + 3.0 * kappa)).ceil() as usize + 1
    }
}

/// Butterworth profile `(1 + (D_o / rho)^{2n})^-1` rescaled to `[beta, 1]`.
pub fn butterworth_2d(size: usize, d_o: f64, n: u32, beta: f64) -> Result<Kernel2D> {
    if size % 2 == 0 {
        return Err(Error::InvalidKernel(format!("side length {size} is not odd")));
    }
    if !(d_o > 0.0) {
        return Err(Error::InvalidParameter(format!("cutoff D_o {d_o} must be > 0")));
    }
    let order = 2 * n as i32;
    Kernel2D::from_fn(size, |dx, dy| {
        let rho = ((dx * dx + dy * dy) as f64).sqrt();
        let raw = if rho == 0.0 {
            0.0
        } else {
            1.0 / (1.0 + (d_o / rho).powi(order))
        };
        beta + (1.0 - beta) * raw
    })
}

/// Anti-aliased disk: each tap holds its covered area fraction, estimated
/// on a 4x4 sub-pixel grid.
pub fn disk_coverage(size: usize, radius: f64) -> Result<Kernel2D> {
    let r2 = radius * radius;
    let n = DISK_SUPERSAMPLE;
    let offs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64 - 0.5).collect();
    Kernel2D::from_fn(size, |dx, dy| {
        let mut hits = 0usize;
        for oy in &offs {
            let y = dy as f64 + oy;
            for ox in &offs {
                let x = dx as f64 + ox;
                if x * x + y * y <= r2 {
                    hits += 1;
                }
            }
        }
        hits as f64 / (n * n) as f64
    })
}

/// Normalized 1D Gaussian truncated at `ceil(3 sigma)`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps
}

/// Separable Gaussian blur inside the kernel canvas (zero outside).
fn gaussian_smooth(k: &Kernel2D, sigma: f64) -> Kernel2D {
    if sigma <= 0.0 {
        return k.clone();
    }
    let g = gaussian_taps(sigma);
    let gh = (g.len() / 2) as isize;
    let n = k.size() as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                for (ti, w) in g.iter().enumerate() {
                    let t = ti as isize - gh;
                    let (sx, sy) = if horizontal { (x - t, y) } else { (x, y - t) };
                    if sx >= 0 && sx < n && sy >= 0 && sy < n {
                        acc += w * src[(sy * n + sx) as usize];
                    }
                }
                out[(y * n + x) as usize] = acc;
            }
        }
        out
    };
    let h = pass(k.taps(), true);
    Kernel2D::from_raw(k.size(), pass(&h, false))
}

/// Combined DP PSF `H`, normalized to unit mass. Radii under half a pixel
/// give a 1x1 delta.
pub fn make_combined_psf(p: &PsfParams) -> Result<Kernel2D> {
    p.shape.validate()?;
    if !p.radius.is_finite() {
        return Err(Error::InvalidParameter("radius must be finite".into()));
    }
    if p.in_focus() {
        return Ok(Kernel2D::delta(1.0));
    }
    let r = p.radius.abs();
    let size = kernel_side(r, p.shape.kappa);
    let b = butterworth_2d(size, p.shape.alpha * r, p.shape.n, p.shape.beta)?;
    let c = disk_coverage(size, r)?;
    let h0 = Kernel2D::from_raw(size, b.taps().iter().zip(c.taps()).map(|(x, y)| x * y).collect());
    Ok(gaussian_smooth(&h0, p.shape.kappa * r).normalized_to(1.0))
}

/// Horizontal ramp `clamp(0.5 - sgn (x - x_o) / (2 r_eff), 0, 1)` spanning
/// the kernel, with `r_eff = (size - 1) / 2`. Front focus falls off to the
/// right. `M(x) + M(2 x_o - x) = 1` at every tap.
pub fn ramp_mask(size: usize, side: FocusSide) -> Result<Kernel2D> {
    if size % 2 == 0 {
        return Err(Error::InvalidKernel(format!("side length {size} is not odd")));
    }
    let r_eff = ((size - 1) / 2) as f64;
    let sgn = side.sign();
    Kernel2D::from_fn(size, |dx, _| {
        if r_eff == 0.0 {
            0.5
        } else {
            (0.5 - sgn * dx as f64 / (2.0 * r_eff)).clamp(0.0, 1.0)
        }
    })
}

/// Left, right and combined kernels of one DP PSF.
#[derive(Debug, Clone, PartialEq)]
pub struct DpPsf {
    pub left: Kernel2D,
    pub right: Kernel2D,
    pub combined: Kernel2D,
    pub params: PsfParams,
}

impl DpPsf {
    /// Checks the DP constraints: each half sums to 1/2, taps are
    /// nonnegative, the right half mirrors the left, and the halves add up
    /// to the combined PSF.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let (l, r, h) = (&self.left, &self.right, &self.combined);
        if (l.sum() - 0.5).abs() > 1e-6 || (r.sum() - 0.5).abs() > 1e-6 {
            return Err(format!("half sums {} / {}", l.sum(), r.sum()));
        }
        if (h.sum() - 1.0).abs() > 1e-6 {
            return Err(format!("combined sum {}", h.sum()));
        }
        if l.min() < 0.0 || r.min() < 0.0 || h.min() < 0.0 {
            return Err("negative tap".into());
        }
        let flip = l.flip_horizontal().max_abs_diff(r);
        if flip > 1e-12 {
            return Err(format!("right is not the mirrored left (max diff {flip:e})"));
        }
        let sum = l.add(r).max_abs_diff(h);
        if sum > 1e-9 {
            return Err(format!("left + right != combined (max diff {sum:e})"));
        }
        Ok(())
    }
}

/// Splits the combined PSF into left/right halves with the ramp mask; the
/// radius sign picks the ramp direction.
pub fn split_dp_psf(p: &PsfParams) -> Result<DpPsf> {
    let combined = make_combined_psf(p)?;
    let mask = ramp_mask(combined.size(), FocusSide::of_radius(p.radius))?;
    let left = Kernel2D::from_raw(
        combined.size(),
        combined.taps().iter().zip(mask.taps()).map(|(h, m)| h * m).collect(),
    );
    let right = left.flip_horizontal();
    Ok(DpPsf {
        left,
        right,
        combined,
        params: *p,
    })
}

/// Rounds a radius to the bank's 0.5 px grid.
pub fn quantize_radius(radius: f64) -> f64 {
    (radius / RADIUS_STEP).round() * RADIUS_STEP
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct PsfKey {
    n: u32,
    alpha_e6: i64,
    beta_e6: i64,
    radius_steps: i64,
}

impl PsfKey {
    fn new(shape: &PsfShape, radius: f64) -> Self {
        Self {
            n: shape.n,
            alpha_e6: (shape.alpha * 1e6).round() as i64,
            beta_e6: (shape.beta * 1e6).round() as i64,
            radius_steps: (radius / RADIUS_STEP).round() as i64,
        }
    }
}

/// Parameter grids for a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankGrids {
    pub n: Vec<u32>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: f64,
    pub radius: Vec<f64>,
}

impl BankGrids {
    /// `n in {3,6,9}`, `alpha in {0.4,0.6,0.8,1.0}`, `beta in {0.1,...,0.4}`,
    /// `kappa = 0.14` at the given radii: 48 shapes per radius.
    pub fn standard(radius: Vec<f64>) -> Self {
        Self {
            n: vec![3, 6, 9],
            alpha: vec![0.4, 0.6, 0.8, 1.0],
            beta: vec![0.1, 0.2, 0.3, 0.4],
            kappa: 0.14,
            radius,
        }
    }

    /// Every `(n, alpha, beta)` combination at this grid's kappa.
    pub fn shapes(&self) -> Vec<PsfShape> {
        let mut out = Vec::with_capacity(self.n.len() * self.alpha.len() * self.beta.len());
        for &n in &self.n {
            for &alpha in &self.alpha {
                for &beta in &self.beta {
                    out.push(PsfShape::new(n, alpha, beta, self.kappa));
                }
            }
        }
        out
    }
}

/// Immutable collection of DP PSFs keyed by `(n, alpha, beta, radius)` with
/// radii quantized to 0.5 px.
#[derive(Debug, Clone, Default)]
pub struct PsfBank {
    kappa: f64,
    entries: Vec<Arc<DpPsf>>,
    index: HashMap<PsfKey, usize>,
}

impl PsfBank {
    /// Bank with no entries; every lookup misses.
    pub fn empty(kappa: f64) -> Self {
        Self {
            kappa,
            ..Default::default()
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in grid order (n, alpha, beta, radius).
    pub fn entries(&self) -> &[Arc<DpPsf>] {
        &self.entries
    }

    pub fn get(&self, shape: &PsfShape, radius: f64) -> Option<&Arc<DpPsf>> {
        if shape.kappa != self.kappa {
            return None;
        }
        self.index
            .get(&PsfKey::new(shape, quantize_radius(radius)))
            .map(|&i| &self.entries[i])
    }

    /// Bank entry for the quantized radius, or a freshly built PSF when the
    /// bank does not cover it.
    pub fn get_or_make(&self, shape: &PsfShape, radius: f64) -> Result<Arc<DpPsf>> {
        let q = quantize_radius(radius);
        match self.get(shape, q) {
            Some(psf) => Ok(Arc::clone(psf)),
            None => Ok(Arc::new(split_dp_psf(&shape.at_radius(q))?)),
        }
    }
}

/// Builds every grid combination. Radii are quantized to 0.5 px first;
/// radii that quantize to the same key collapse into one entry.
pub fn build_bank(grids: &BankGrids) -> Result<PsfBank> {
    let mut radii: Vec<f64> = grids.radius.iter().map(|&r| quantize_radius(r)).collect();
    radii.dedup();
    let params: Vec<PsfParams> = grids
        .shapes()
        .into_iter()
        .flat_map(|s| radii.iter().map(move |&r| s.at_radius(r)))
        .collect();
    let built: Vec<DpPsf> = params.par_iter().map(split_dp_psf).collect::<Result<_>>()?;
    let mut bank = PsfBank::empty(grids.kappa);
    for psf in built {
        let key = PsfKey::new(&psf.params.shape, psf.params.radius);
        if bank.index.contains_key(&key) {
            continue;
        }
        bank.index.insert(key, bank.entries.len());
        bank.entries.push(Arc::new(psf));
    }
    Ok(bank)
}
