use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::derivative::DerivativeSet;
use crate::error::{Error, Result};
use crate::imgcore::{Image, Kernel2D};
use crate::lensfx::{distort, DistortionCoeffs};
use crate::metrics::ncc2d;
use crate::psfbank::{split_dp_psf, PsfParams};

/// Which part of a DP PSF a measured kernel is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfComponent {
    #[default]
    Combined,
    Left,
    Right,
}

/// Search grids for [`fit_psf_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfFitGrids {
    pub n: Vec<u32>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Signed CoC radii in pixels.
    pub radius: Vec<f64>,
    #[serde(default)]
    pub component: PsfComponent,
}

impl PsfFitGrids {
    /// The 48-shape grid at the given radii.
    pub fn standard(radius: Vec<f64>) -> Self {
        Self {
            n: vec![3, 6, 9],
            alpha: vec![0.4, 0.6, 0.8, 1.0],
            beta: vec![0.1, 0.2, 0.3, 0.4],
            kappa: vec![0.14],
            radius,
            component: PsfComponent::Combined,
        }
    }

    pub fn candidates(&self) -> Vec<PsfParams> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &alpha in &self.alpha {
                for &beta in &self.beta {
                    for &kappa in &self.kappa {
                        for &r in &self.radius {
                            out.push(PsfParams::new(n, alpha, beta, kappa, r));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsfFit {
    pub params: PsfParams,
    pub objective: f64,
}

fn params_key_cmp(a: &PsfParams, b: &PsfParams) -> Ordering {
    a.shape
        .n
        .cmp(&b.shape.n)
        .then(a.shape.alpha.total_cmp(&b.shape.alpha))
        .then(a.shape.beta.total_cmp(&b.shape.beta))
        .then(a.shape.kappa.total_cmp(&b.shape.kappa))
        .then(a.radius.total_cmp(&b.radius))
}

/// `sum_i |D_i (E - H)|^2` including the zeroth-order term, with both
/// kernels embedded on a common canvas one pixel wider than the larger.
pub fn psf_fit_objective(e: &Kernel2D, h: &Kernel2D) -> f64 {
    let size = e.size().max(h.size()) + 2;
    let (ee, hh) = (e.embed(size), h.embed(size));
    let diff: Vec<f64> = ee.taps().iter().zip(hh.taps()).map(|(a, b)| a - b).collect();
    DerivativeSet::new().energy(&diff, size, size)
}

fn model_kernel(p: &PsfParams, component: PsfComponent) -> Result<Kernel2D> {
    let dp = split_dp_psf(p)?;
    Ok(match component {
        PsfComponent::Combined => dp.combined,
        PsfComponent::Left => dp.left.scaled(2.0),
        PsfComponent::Right => dp.right.scaled(2.0),
    })
}

/// Exhaustive search for the model PSF closest to `e`. The measured kernel
/// is rescaled to unit mass, as are left/right model halves. Exact ties go
/// to the lexicographically smallest `(n, alpha, beta, kappa, radius)`.
pub fn fit_psf_params(e: &Kernel2D, grids: &PsfFitGrids) -> Result<PsfFit> {
    let cands = grids.candidates();
    if cands.is_empty() {
        return Err(Error::InvalidParameter("PSF fit grids must be nonempty".into()));
    }
    let mass = e.sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::InvalidKernel(format!("measured kernel mass {mass} must be positive")));
    }
    let e = e.normalized_to(1.0);
    let scored: Vec<PsfFit> = cands
        .par_iter()
        .map(|p| {
            p.shape.validate()?;
            let h = model_kernel(p, grids.component)?;
            Ok(PsfFit { params: *p, objective: psf_fit_objective(&e, &h) })
        })
        .collect::<Result<_>>()?;
    Ok(scored
        .into_iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(params_key_cmp(&a.params, &b.params)))
        .expect("nonempty"))
}

/// Coefficient grids for [`fit_distortion_coeffs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionGrids {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
}

impl DistortionGrids {
    pub fn candidates(&self) -> Vec<DistortionCoeffs> {
        let mut out = Vec::with_capacity(self.c1.len() * self.c2.len() * self.c3.len());
        for &a in &self.c1 {
            for &b in &self.c2 {
                for &c in &self.c3 {
                    out.push([a, b, c]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistortionFit {
    pub coeffs: DistortionCoeffs,
    /// Normalized cross-correlation with the reference.
    pub score: f64,
}

fn coeffs_cmp(a: &DistortionCoeffs, b: &DistortionCoeffs) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
}

/// Distorts `pattern` with every grid triple and keeps the one whose
/// result correlates best with `reference`. Exact ties go to the
/// lexicographically smallest triple.
pub fn fit_distortion_coeffs(reference: &Image, pattern: &Image, grids: &DistortionGrids) -> Result<DistortionFit> {
    reference.ensure_same_shape(pattern)?;
    let cands = grids.candidates();
    if cands.is_empty() {
        return Err(Error::InvalidParameter("distortion grids must be nonempty".into()));
    }
    let scored: Vec<DistortionFit> = cands
        .par_iter()
        .map(|c| {
            let warped = distort(pattern, c)?;
            Ok(DistortionFit { coeffs: *c, score: ncc2d(reference, &warped.image)? })
        })
        .collect::<Result<_>>()?;
    Ok(scored
        .into_iter()
        .max_by(|a, b| a.score.total_cmp(&b.score).then(coeffs_cmp(&b.coeffs, &a.coeffs)))
        .expect("nonempty"))
}
