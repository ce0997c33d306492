use dpsynth::lensfx::{add_signal_noise, NoiseConfig, NoiseKey, RadialFrame, PRESET_COEFFS};
use dpsynth::metrics::{mae, ncc2d, psnr, ssim};
use dpsynth::psfbank::{kernel_side, split_dp_psf};
use dpsynth::render::{render_dp_frame, RenderOptions};
use dpsynth::{CameraConfig, DepthMap, Image, PsfBank, PsfShape};
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = PsfShape> {
    (prop::sample::select(vec![3u32, 6, 9]), 0.4..1.0f64, 0.1..0.4f64, 0.05..0.2f64)
        .prop_map(|(n, a, b, k)| PsfShape::new(n, a, b, k))
}

fn image(w: usize, h: usize, c: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..1.0f64, w * h * c).prop_map(move |v| Image::from_vec(w, h, c, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dp_split_invariants_hold(s in shape(), r in -15.0..15.0f64) {
        let psf = split_dp_psf(&s.at_radius(r)).unwrap();
        prop_assert!(psf.check_invariants().is_ok(), "{:?}", psf.check_invariants());
        prop_assert_eq!(psf.combined.size(), kernel_side(r.abs(), s.kappa));
    }

    #[test]
    fn flat_scene_is_preserved_away_from_borders(
        s in shape(),
        value in 0.05..1.0f64,
        depths in prop::collection::vec(2.0..60.0f64, 4),
    ) {
        let (w, h) = (48, 48);
        let cam = CameraConfig::new("p", 7.0, 5.0, 8.0);
        let depth = DepthMap::new(w, h, (0..w * h).map(|i| depths[(i % w) / 12]).collect()).unwrap();
        let sharp = Image::filled(w, h, 1, value).unwrap();
        let f = render_dp_frame(&sharp, &depth, &cam, &s, &PsfBank::empty(s.kappa), &RenderOptions::default()).unwrap();
        let r = depths.iter().map(|&d| dpsynth::optics::coc_radius(&cam, d).unwrap().abs()).fold(0.0, f64::max);
        let inset = kernel_side(r, s.kappa) / 2;
        prop_assume!(2 * inset < w);
        for y in inset..h - inset {
            for x in inset..w - inset {
                let sum = f.left.get(x, y, 0) + f.right.get(x, y, 0);
                prop_assert!((sum - value).abs() < 1e-9, "({x},{y}) {sum} vs {value}");
            }
        }
    }

    #[test]
    fn point_distortion_inverts(
        preset in 0usize..5,
        scale in 0.0..1.0f64,
        x in 0.0..159.0f64,
        y in 0.0..119.0f64,
    ) {
        let c = PRESET_COEFFS[preset].map(|v| v * scale);
        let frame = RadialFrame::new(160, 120);
        let (dx, dy) = frame.distort_point(&c, x, y);
        let (ux, uy) = frame.undistort_point(&c, dx, dy).unwrap();
        prop_assert!((ux - x).hypot(uy - y) < 1e-6);
    }

    #[test]
    fn zero_sigma_noise_is_identity(img in image(9, 7, 3), seed in any::<u64>(), frame in any::<u64>()) {
        let out = add_signal_noise(&img, &NoiseConfig { sigma: 0.0, seed }, NoiseKey { frame, view: 1 }).unwrap();
        prop_assert_eq!(out, img);
    }

    #[test]
    fn metrics_are_symmetric(a in image(16, 16, 1), b in image(16, 16, 1)) {
        prop_assert_eq!(psnr(&a, &b, 100.0).unwrap(), psnr(&b, &a, 100.0).unwrap());
        prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ncc2d(&a, &b).unwrap() - ncc2d(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn radius_sign_mirrors_views(s in shape(), r in 1.0..12.0f64) {
        let near = split_dp_psf(&s.at_radius(-r)).unwrap();
        let far = split_dp_psf(&s.at_radius(r)).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        prop_assert!(close(near.combined.taps(), far.combined.taps()));
        prop_assert!(close(near.left.taps(), far.right.taps()));
    }
}
