//! Depth-layered dual-pixel defocus rendering.
//!
//! The frame is sliced into layers of similar signed CoC radius, each layer
//! (color and coverage mask) is convolved with the left and right DP
//! kernels for its radius, and the blurred layers are alpha-composited
//! back-to-front with the blurred masks as opacity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::conv::convolve_planes;
use crate::imgcore::{DepthMap, Image, Kernel2D};
use crate::optics::{coc_field, CameraConfig, CocField};
use crate::psfbank::{DpPsf, PsfBank, PsfShape};

/// Hard cap on the number of depth layers.
pub const MAX_LAYERS: usize = 500;

/// Target width of a layer bin in CoC pixels; matches the bank's radius
/// quantization so neighbouring layers do not share a PSF.
pub const LAYER_RADIUS_STEP: f64 = 0.5;

/// Masks at or below this value contribute no color or opacity.
pub const MASK_EPS: f64 = 1e-6;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    fn grow_within(self, margin: usize, width: usize, height: usize) -> Rect {
        let x0 = self.x.saturating_sub(margin);
        let y0 = self.y.saturating_sub(margin);
        let x1 = (self.x + self.width + margin).min(width);
        let y1 = (self.y + self.height + margin).min(height);
        Rect {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }
}

/// One depth slice. `mask` and `color` cover only `bounds`; the mask is 1
/// on member pixels and 0 elsewhere, and `color` is the sharp image times
/// the mask.
#[derive(Debug, Clone)]
pub struct DepthLayer {
    /// 0 is the farthest layer.
    pub index: usize,
    pub representative_depth: f64,
    pub signed_radius: f64,
    pub bounds: Rect,
    pub mask: Image,
    pub color: Image,
}

impl DepthLayer {
    /// Mask expanded to the full frame.
    pub fn full_mask(&self, width: usize, height: usize) -> Image {
        let mut out = Image::zeros(width, height, 1).expect("1 channel");
        let b = self.bounds;
        for y in 0..b.height {
            for x in 0..b.width {
                out.set(b.x + x, b.y + y, 0, self.mask.get(x, y, 0));
            }
        }
        out
    }
}

/// Pixel-to-bin assignment for a CoC field.
struct LayerPlan {
    /// Bin per pixel.
    bins: Vec<usize>,
    /// Per nonempty bin, far to near: (bin, center radius, bounds).
    layers: Vec<(usize, f64, Rect)>,
}

fn plan_layers(coc: &CocField, max_layers: usize) -> LayerPlan {
    let radii = coc.radii();
    let (w, h) = coc.dims();
    let rmin = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = rmax - rmin;
    let nbins = if span > 0.0 {
        ((span / LAYER_RADIUS_STEP).ceil() as usize).clamp(1, max_layers)
    } else {
        1
    };
    let bin_width = if nbins > 1 { span / nbins as f64 } else { span };
    let bins: Vec<usize> = radii
        .iter()
        .map(|&r| {
            if nbins == 1 {
                0
            } else {
                (((r - rmin) / bin_width) as usize).min(nbins - 1)
            }
        })
        .collect();

    let mut bbox = vec![(usize::MAX, usize::MAX, 0usize, 0usize); nbins];
    for y in 0..h {
        for x in 0..w {
            let b = &mut bbox[bins[y * w + x]];
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x + 1);
            b.3 = b.3.max(y + 1);
        }
    }
    // larger signed radius = farther away
    let layers = (0..nbins)
        .rev()
        .filter(|&b| bbox[b].0 != usize::MAX)
        .map(|b| {
            let (x0, y0, x1, y1) = bbox[b];
            let center = if nbins == 1 {
                rmin + 0.5 * span
            } else {
                rmin + (b as f64 + 0.5) * bin_width
            };
            (
                b,
                center,
                Rect {
                    x: x0,
                    y: y0,
                    width: x1 - x0,
                    height: y1 - y0,
                },
            )
        })
        .collect();
    LayerPlan { bins, layers }
}

fn materialize(sharp: &Image, coc: &CocField, plan: &LayerPlan, ordinal: usize) -> DepthLayer {
    let (bin, center, b) = plan.layers[ordinal];
    let c = sharp.channels();
    let w = sharp.width();
    let mut mask = vec![0.0; b.width * b.height];
    let mut color = vec![0.0; b.width * b.height * c];
    for y in 0..b.height {
        for x in 0..b.width {
            let p = (b.y + y) * w + b.x + x;
            if plan.bins[p] == bin {
                let i = y * b.width + x;
                mask[i] = 1.0;
                color[i * c..(i + 1) * c].copy_from_slice(&sharp.data()[p * c..(p + 1) * c]);
            }
        }
    }
    DepthLayer {
        index: ordinal,
        representative_depth: coc.depth_at_radius(center).unwrap_or(f64::INFINITY),
        signed_radius: center,
        bounds: b,
        mask: Image::from_raw(b.width, b.height, 1, mask),
        color: Image::from_raw(b.width, b.height, c, color),
    }
}

/// Slices the frame into layers, far to near, by binning the signed CoC
/// radius uniformly over its occupied range. The bin count is
/// `min(max_layers, ceil(range / 0.5 px))`; empty bins are dropped and each
/// layer's radius is its bin center.
pub fn decompose_layers(sharp: &Image, coc: &CocField, max_layers: usize) -> Result<Vec<DepthLayer>> {
    check_layer_inputs(sharp, coc, max_layers)?;
    let plan = plan_layers(coc, max_layers);
    Ok((0..plan.layers.len()).map(|i| materialize(sharp, coc, &plan, i)).collect())
}

fn check_layer_inputs(sharp: &Image, coc: &CocField, max_layers: usize) -> Result<()> {
    if sharp.dims() != coc.dims() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs CoC field {}x{}",
            sharp.width(),
            sharp.height(),
            coc.width(),
            coc.height()
        )));
    }
    if max_layers == 0 || max_layers > MAX_LAYERS {
        return Err(Error::InvalidParameter(format!(
            "max_layers {max_layers} must be in 1..={MAX_LAYERS}"
        )));
    }
    Ok(())
}

/// A layer blurred for both views, covering `region` of the frame.
#[derive(Debug, Clone)]
pub struct BlurredLayer {
    pub region: Rect,
    pub left_color: Image,
    pub right_color: Image,
    pub left_mask: Image,
    pub right_mask: Image,
}

/// Convolves the layer's color and mask with the left and right kernels.
/// The output region is the layer bounds grown by the kernel half-width and
/// clipped to the `width x height` frame; convolution is zero-padded.
pub fn blur_layer(layer: &DepthLayer, psf: &DpPsf, width: usize, height: usize) -> BlurredLayer {
    let half = psf.left.half().max(psf.right.half());
    let region = layer.bounds.grow_within(half, width, height);
    let (rw, rh) = (region.width, region.height);
    let c = layer.color.channels();
    let (ox, oy) = (layer.bounds.x - region.x, layer.bounds.y - region.y);

    let mut planes = vec![vec![0.0; rw * rh]; c + 1];
    let b = layer.bounds;
    for y in 0..b.height {
        for x in 0..b.width {
            let dst = (y + oy) * rw + x + ox;
            for (ch, plane) in planes.iter_mut().enumerate().take(c) {
                plane[dst] = layer.color.get(x, y, ch);
            }
            planes[c][dst] = layer.mask.get(x, y, 0);
        }
    }
    let refs: Vec<&[f64]> = planes.iter().map(Vec::as_slice).collect();
    let kernels: [&Kernel2D; 2] = [&psf.left, &psf.right];
    let mut out = convolve_planes(&refs, rw, rh, &kernels);
    for view in &mut out {
        for plane in view.iter_mut() {
            for v in plane.iter_mut() {
                // FFT round-off can leave tiny negatives
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    let mut right = out.pop().expect("right view");
    let mut left = out.pop().expect("left view");
    let right_mask = right.pop().expect("mask plane");
    let left_mask = left.pop().expect("mask plane");
    BlurredLayer {
        region,
        left_color: Image::from_planes(rw, rh, &left).expect("color planes"),
        right_color: Image::from_planes(rw, rh, &right).expect("color planes"),
        left_mask: Image::from_raw(rw, rh, 1, left_mask),
        right_mask: Image::from_raw(rw, rh, 1, right_mask),
    }
}

/// Back-to-front accumulation for one view.
struct ViewAccumulator {
    width: usize,
    channels: usize,
    color: Vec<f64>,
    alpha: Vec<f64>,
}

impl ViewAccumulator {
    fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            channels,
            color: vec![0.0; width * height * channels],
            alpha: vec![0.0; width * height],
        }
    }

    /// Lays one blurred layer over the accumulated result. Color is
    /// normalized by the blurred mask; opacity is twice the mask because
    /// each view's kernel carries half the mass.
    fn over(&mut self, region: Rect, color: &Image, mask: &Image) {
        let c = self.channels;
        for y in 0..region.height {
            for x in 0..region.width {
                let m = mask.get(x, y, 0);
                if m <= MASK_EPS {
                    continue;
                }
                let a = (2.0 * m).clamp(0.0, 1.0);
                let p = (region.y + y) * self.width + region.x + x;
                for ch in 0..c {
                    let layer_color = color.get(x, y, ch) / m;
                    let acc = &mut self.color[p * c + ch];
                    *acc = layer_color * a + *acc * (1.0 - a);
                }
                self.alpha[p] = a + self.alpha[p] * (1.0 - a);
            }
        }
    }

    /// Divides out accumulated coverage and halves the result so each view
    /// carries half the frame's energy.
    fn finish(self, height: usize) -> Image {
        let c = self.channels;
        let mut data = self.color;
        for (p, a) in self.alpha.iter().enumerate() {
            for v in &mut data[p * c..(p + 1) * c] {
                *v = if *a > MASK_EPS {
                    (0.5 * *v / a).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        Image::from_raw(self.width, height, c, data)
    }
}

/// Composites blurred layers (far to near) into left and right views of a
/// `width x height` frame.
pub fn composite(
    blurred_layers: &[BlurredLayer],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<(Image, Image)> {
    if blurred_layers.is_empty() {
        return Err(Error::InvalidParameter("nothing to composite".into()));
    }
    let mut left = ViewAccumulator::new(width, height, channels);
    let mut right = ViewAccumulator::new(width, height, channels);
    for l in blurred_layers {
        left.over(l.region, &l.left_color, &l.left_mask);
        right.over(l.region, &l.right_color, &l.right_mask);
    }
    Ok((left.finish(height), right.finish(height)))
}

/// Distance from the frame center over the center-to-corner distance, with
/// pixel centers at integer coordinates: 0 at the center, 1 at the corners.
pub fn radial_distance_map(width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("radial distance map needs positive dimensions".into()));
    }
    let xo = (width - 1) as f64 / 2.0;
    let yo = (height - 1) as f64 / 2.0;
    let corner = (xo * xo + yo * yo).sqrt();
    Ok(Image::from_fn(width, height, |x, y| {
        if corner == 0.0 {
            0.0
        } else {
            ((x as f64 - xo).hypot(y as f64 - yo) / corner).min(1.0)
        }
    }))
}

/// Provenance carried with a rendered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub camera_id: String,
    pub psf_shape: PsfShape,
    pub layer_count: usize,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
}

/// Output bundle of the DP generator.
#[derive(Debug, Clone)]
pub struct DpFrame {
    pub left: Image,
    pub right: Image,
    pub combined_blur: Image,
    pub sharp: Image,
    pub radial_distance: Image,
    pub meta: FrameMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub max_layers: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            max_layers: MAX_LAYERS,
        }
    }
}

/// Renders left/right DP views of `sharp` seen through `cam`, with PSFs of
/// `shape` taken from `bank` (built on demand for radii the bank lacks).
/// Distortion and noise are not applied here.
pub fn render_dp_frame(
    sharp: &Image,
    depth: &DepthMap,
    cam: &CameraConfig,
    shape: &PsfShape,
    bank: &PsfBank,
    opts: &RenderOptions,
) -> Result<DpFrame> {
    depth.ensure_matches(sharp)?;
    shape.validate()?;
    let coc = coc_field(cam, depth)?;
    let (left, right, layer_count) = render_views(sharp, &coc, shape, bank, opts)?;
    let combined_blur = left.zip_map(&right, |a, b| (a + b).clamp(0.0, 1.0))?;
    Ok(DpFrame {
        left,
        right,
        combined_blur,
        sharp: sharp.clone(),
        radial_distance: radial_distance_map(sharp.width(), sharp.height())?,
        meta: FrameMeta {
            camera_id: cam.id.clone(),
            psf_shape: *shape,
            layer_count,
            noise_sigma: None,
            seed: None,
        },
    })
}

/// Layered render from a precomputed CoC field; returns (left, right,
/// layer count).
pub fn render_views(
    sharp: &Image,
    coc: &CocField,
    shape: &PsfShape,
    bank: &PsfBank,
    opts: &RenderOptions,
) -> Result<(Image, Image, usize)> {
    check_layer_inputs(sharp, coc, opts.max_layers)?;
    let (w, h) = sharp.dims();
    let c = sharp.channels();
    let plan = plan_layers(coc, opts.max_layers);
    let mut left = ViewAccumulator::new(w, h, c);
    let mut right = ViewAccumulator::new(w, h, c);
    // Blur a bounded batch at a time so memory stays flat; compositing
    // order is fixed regardless of the batch size.
    let batch = rayon::current_num_threads().max(1);
    let ordinals: Vec<usize> = (0..plan.layers.len()).collect();
    for chunk in ordinals.chunks(batch) {
        let blurred: Vec<BlurredLayer> = chunk
            .par_iter()
            .map(|&i| {
                let layer = materialize(sharp, coc, &plan, i);
                let psf = bank.get_or_make(shape, layer.signed_radius)?;
                Ok(blur_layer(&layer, &psf, w, h))
            })
            .collect::<Result<_>>()?;
        for l in &blurred {
            left.over(l.region, &l.left_color, &l.left_mask);
            right.over(l.region, &l.right_color, &l.right_mask);
        }
    }
    Ok((left.finish(h), right.finish(h), plan.layers.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psfbank::split_dp_psf;

    fn shape() -> PsfShape {
        PsfShape::new(3, 0.8, 0.2, 0.14)
    }

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> CocField {
        let mut r = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                r.push(f(x, y));
            }
        }
        CocField::from_radii(w, h, r, 50.0, 2.0).unwrap()
    }

    fn gray(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0)
    }

    #[test]
    fn constant_radius_is_one_layer() {
        let layers = decompose_layers(&gray(9, 7), &field(9, 7, |_, _| 3.0), 500).unwrap();
        assert_eq!(layers.len(), 1);
        assert_eq!(layers[0].signed_radius, 3.0);
        assert!(layers[0].mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn two_planes_partition_far_to_near() {
        let coc = field(10, 6, |x, _| if x < 5 { -4.0 } else { 6.0 });
        let layers = decompose_layers(&gray(10, 6), &coc, 500).unwrap();
        assert_eq!(layers.len(), 2);
        assert!(layers[0].signed_radius > layers[1].signed_radius);
        assert!(layers[0].representative_depth > layers[1].representative_depth);
        let m0 = layers[0].full_mask(10, 6);
        let m1 = layers[1].full_mask(10, 6);
        for (a, b) in m0.data().iter().zip(m1.data()) {
            assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn random_field_partitions_exactly() {
        let coc = field(40, 30, |x, y| {
            let s = crate::rng::mix_keys(&[3, x as u64, y as u64]);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 600.0 - 300.0
        });
        for max_layers in [1, 7, 500] {
            let layers = decompose_layers(&gray(40, 30), &coc, max_layers).unwrap();
            assert!(layers.len() <= max_layers);
            let mut sum = vec![0.0; 40 * 30];
            for l in &layers {
                for (s, m) in sum.iter_mut().zip(l.full_mask(40, 30).data()) {
                    *s += m;
                }
            }
            assert!(sum.iter().all(|&v| v == 1.0));
        }
        assert!(decompose_layers(&gray(40, 30), &coc, 0).is_err());
        assert!(decompose_layers(&gray(40, 30), &coc, 501).is_err());
    }

    #[test]
    fn delta_psf_halves_layer() {
        let img = gray(8, 8);
        let layers = decompose_layers(&img, &field(8, 8, |_, _| 0.0), 500).unwrap();
        let psf = split_dp_psf(&shape().at_radius(0.0)).unwrap();
        let b = blur_layer(&layers[0], &psf, 8, 8);
        for (o, i) in b.left_color.data().iter().zip(img.data()) {
            assert_eq!(*o, 0.5 * i);
        }
        assert!(b.right_mask.data().iter().all(|&m| m == 0.5));
    }

    #[test]
    fn blurred_constant_mask_is_half_in_interior() {
        let n = 64;
        let layers = decompose_layers(&gray(n, n), &field(n, n, |_, _| 6.0), 500).unwrap();
        let psf = split_dp_psf(&shape().at_radius(6.0)).unwrap();
        let half = psf.left.half();
        let b = blur_layer(&layers[0], &psf, n, n);
        for y in half..n - half {
            for x in half..n - half {
                assert!((b.left_mask.get(x, y, 0) - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_stamps_left_kernel() {
        let n = 41;
        let mut img = Image::zeros(n, n, 1).unwrap();
        img.set(20, 20, 0, 1.0);
        let layers = decompose_layers(&img, &field(n, n, |_, _| 8.0), 500).unwrap();
        let psf = split_dp_psf(&shape().at_radius(8.0)).unwrap();
        let b = blur_layer(&layers[0], &psf, n, n);
        let h = psf.left.half() as isize;
        for dy in -h..=h {
            for dx in -h..=h {
                let v = b.left_color.get((20 + dx) as usize, (20 + dy) as usize, 0);
                assert!((v - psf.left.at_offset(dx, dy)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn radial_map_geometry() {
        let m = radial_distance_map(9, 9).unwrap();
        assert_eq!(m.get(4, 4, 0), 0.0);
        assert_eq!(m.get(0, 0, 0), 1.0);
        assert_eq!(m.get(8, 8, 0), 1.0);
        assert!((m.get(4, 0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(radial_distance_map(0, 3).is_err());
        assert_eq!(radial_distance_map(1, 1).unwrap().data(), &[0.0]);
    }

    #[test]
    fn composite_single_in_focus_layer() {
        let img = gray(6, 5);
        let layers = decompose_layers(&img, &field(6, 5, |_, _| 0.1), 500).unwrap();
        let psf = split_dp_psf(&shape().at_radius(0.1)).unwrap();
        let b = blur_layer(&layers[0], &psf, 6, 5);
        let (l, r) = composite(&[b], 6, 5, 1).unwrap();
        for i in 0..30 {
            assert!((l.data()[i] - img.data()[i] / 2.0).abs() < 1e-15);
            assert_eq!(l.data()[i], r.data()[i]);
        }
        assert!(composite(&[], 6, 5, 1).is_err());
    }
}
