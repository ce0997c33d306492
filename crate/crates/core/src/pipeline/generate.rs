use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{FrameJob, GenerationConfig};
use crate::error::{Error, Result};
use crate::imgcore::{load_depth, load_image, save_image, BitDepth, Image};
use crate::lensfx::{add_signal_noise, distort, NoiseConfig, NoiseKey, VIEW_LEFT, VIEW_RIGHT};
use crate::optics::CameraConfig;
use crate::psfbank::{PsfBank, PsfShape};
use crate::render::{render_dp_frame, RenderOptions};
use crate::rng::{hash_str, mix_keys, KeyedStream};

/// Random choices for one frame, shared by every camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDraw {
    pub shape: PsfShape,
    pub sigma: f64,
}

/// Draws the PSF shape and noise level of `(sequence, frame)` from the
/// stream keyed by the master seed, so the choice does not depend on
/// scheduling or on which other frames are present.
pub fn draw_frame(cfg: &GenerationConfig, sequence: &str, frame: u64) -> FrameDraw {
    let s = KeyedStream::new(&[cfg.seed, hash_str(sequence), frame]);
    let p = &cfg.psf;
    FrameDraw {
        shape: PsfShape::new(
            p.n[s.index(0, p.n.len())],
            p.alpha[s.index(1, p.alpha.len())],
            p.beta[s.index(2, p.beta.len())],
            p.kappa,
        ),
        sigma: cfg.sigma[s.index(3, cfg.sigma.len())],
    }
}

/// Output file suffixes in quintet order.
pub const VIEW_SUFFIXES: [&str; 5] = ["l", "r", "b", "s", "rd"];

/// Sidecar metadata written next to each quintet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub sequence: String,
    pub frame: u64,
    pub camera: CameraConfig,
    pub psf: PsfShape,
    pub sigma: f64,
    pub seed: u64,
    pub layer_count: usize,
    pub width: usize,
    pub height: usize,
    pub bit_depth: BitDepth,
    pub distortion_fallback_pixels: usize,
    pub source_image: PathBuf,
    pub source_depth: PathBuf,
    /// Paths relative to the output directory: the five views, then the
    /// sidecar.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFrame {
    pub sequence: String,
    pub frame: u64,
    pub camera: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub seed: u64,
    pub bit_depth: BitDepth,
    pub frames: Vec<FrameRecord>,
    pub failed: Vec<FailedFrame>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn quintet_stem(frame: u64, camera_id: &str) -> String {
    format!("{frame:05}_{camera_id}")
}

/// Noise stream key of one view, independent per sequence, frame and camera.
fn noise_key(job: &FrameJob, cam: &CameraConfig, view: u64) -> NoiseKey {
    NoiseKey {
        frame: mix_keys(&[hash_str(&job.sequence), job.frame, hash_str(&cam.id)]),
        view,
    }
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn render_one(
    cfg: &GenerationConfig,
    job: &FrameJob,
    sharp: &Image,
    depth: &crate::imgcore::DepthMap,
    cam: &CameraConfig,
) -> Result<FrameRecord> {
    let draw = draw_frame(cfg, &job.sequence, job.frame);
    let bank = PsfBank::empty(cfg.psf.kappa);
    let frame = render_dp_frame(sharp, depth, cam, &draw.shape, &bank, &RenderOptions { max_layers: cfg.max_layers })?;

    let dl = distort(&frame.left, &cam.distortion)?;
    let dr = distort(&frame.right, &cam.distortion)?;
    let ds = distort(&frame.sharp, &cam.distortion)?;
    let noise = NoiseConfig { sigma: draw.sigma, seed: cfg.seed };
    let left = add_signal_noise(&dl.image, &noise, noise_key(job, cam, VIEW_LEFT))?;
    let right = add_signal_noise(&dr.image, &noise, noise_key(job, cam, VIEW_RIGHT))?;
    let combined = left.zip_map(&right, |a, b| (a + b).clamp(0.0, 1.0))?;

    let stem = quintet_stem(job.frame, &cam.id);
    let dir = cfg.output_dir.join(&job.sequence);
    let views = [&left, &right, &combined, &ds.image, &frame.radial_distance];
    let mut files = Vec::with_capacity(6);
    for (img, suffix) in views.into_iter().zip(VIEW_SUFFIXES) {
        let name = format!("{stem}_{suffix}.png");
        save_image(img, dir.join(&name), cfg.bit_depth)?;
        files.push(format!("{}/{name}", job.sequence));
    }
    files.push(format!("{}/{stem}.json", job.sequence));
    let record = FrameRecord {
        sequence: job.sequence.clone(),
        frame: job.frame,
        camera: cam.clone(),
        psf: draw.shape,
        sigma: draw.sigma,
        seed: cfg.seed,
        layer_count: frame.meta.layer_count,
        width: sharp.width(),
        height: sharp.height(),
        bit_depth: cfg.bit_depth,
        distortion_fallback_pixels: dl.fallback_pixels + dr.fallback_pixels + ds.fallback_pixels,
        source_image: job.image.clone(),
        source_depth: job.depth.clone(),
        files,
    };
    write_json(&record, &dir.join(format!("{stem}.json")))?;
    Ok(record)
}

/// Runs the whole generation recipe: every input frame through every
/// camera. Frames render in parallel on the current rayon pool; the
/// manifest is ordered by (sequence, frame, camera position) so output
/// bytes do not depend on the worker count. A failing frame is logged,
/// recorded under `failed` and skipped.
pub fn generate(cfg: &GenerationConfig) -> Result<Manifest> {
    cfg.validate()?;
    let jobs = cfg.frame_jobs();
    for seq in jobs.iter().map(|j| &j.sequence).collect::<std::collections::BTreeSet<_>>() {
        let dir = cfg.output_dir.join(seq);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| (&jobs[a].sequence, jobs[a].frame).cmp(&(&jobs[b].sequence, jobs[b].frame)));

    let results: Vec<Vec<std::result::Result<FrameRecord, FailedFrame>>> = order
        .par_iter()
        .map(|&i| {
            let job = &jobs[i];
            let fail_all = |e: Error| {
                cfg.cameras
                    .iter()
                    .map(|cam| {
                        error!("{} frame {} camera {}: {e}", job.sequence, job.frame, cam.id);
                        Err(FailedFrame {
                            sequence: job.sequence.clone(),
                            frame: job.frame,
                            camera: cam.id.clone(),
                            error: e.to_string(),
                        })
                    })
                    .collect()
            };
            let sharp = match load_image(&job.image, None) {
                Ok(img) => img,
                Err(e) => return fail_all(e),
            };
            let depth = match load_depth(&job.depth, &cfg.depth) {
                Ok(d) => d,
                Err(e) => return fail_all(e),
            };
            cfg.cameras
                .iter()
                .map(|cam| {
                    render_one(cfg, job, &sharp, &depth, cam)
                        .inspect(|_| info!("{} frame {} camera {}: done", job.sequence, job.frame, cam.id))
                        .map_err(|e| {
                            error!("{} frame {} camera {}: {e}", job.sequence, job.frame, cam.id);
                            FailedFrame {
                                sequence: job.sequence.clone(),
                                frame: job.frame,
                                camera: cam.id.clone(),
                                error: e.to_string(),
                            }
                        })
                })
                .collect()
        })
        .collect();

    let mut manifest = Manifest {
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        bit_depth: cfg.bit_depth,
        frames: Vec::new(),
        failed: Vec::new(),
    };
    for r in results.into_iter().flatten() {
        match r {
            Ok(rec) => manifest.frames.push(rec),
            Err(f) => manifest.failed.push(f),
        }
    }
    write_json(&manifest, &cfg.output_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::DepthFormat;

    #[test]
    fn draws_are_keyed_by_sequence_and_frame() {
        let cfg = GenerationConfig::default();
        let a = draw_frame(&cfg, "s", 3);
        assert_eq!(a, draw_frame(&cfg, "s", 3));
        let others: Vec<FrameDraw> = (0..20).map(|f| draw_frame(&cfg, "s", f)).collect();
        assert!(others.iter().any(|d| d != &a));
        assert!(cfg.sigma.contains(&a.sigma));
        assert!(cfg.psf.shapes().contains(&a.shape));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = GenerationConfig::default();
        cfg.output_dir = dir.path().join("out");
        let m = generate(&cfg).unwrap();
        assert!(m.frames.is_empty() && m.failed.is_empty());
        let text = std::fs::read_to_string(cfg.output_dir.join(MANIFEST_FILE)).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn small_frame_writes_quintets_and_records_failures() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(24, 16, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        save_image(&img, dir.path().join("a.png"), BitDepth::Eight).unwrap();
        let depth = Image::from_fn(24, 16, |x, _| 0.2 + x as f64 * 0.02);
        crate::imgcore::io::write_pfm(dir.path().join("a.pfm"), 24, 16, 1, depth.data()).unwrap();
        let small = Image::from_fn(8, 8, |_, _| 0.5);
        save_image(&small, dir.path().join("bad.png"), BitDepth::Eight).unwrap();

        let mut cfg = GenerationConfig::default();
        cfg.cameras.truncate(2);
        cfg.output_dir = dir.path().join("out");
        cfg.depth.format = DepthFormat::Pfm;
        for (img, seq) in [("a.png", "s0"), ("bad.png", "s1")] {
            cfg.inputs.push(super::super::config::InputEntry {
                image: dir.path().join(img),
                depth: dir.path().join("a.pfm"),
                sequence: seq.into(),
                frame: None,
            });
        }
        let m = generate(&cfg).unwrap();
        assert_eq!(m.frames.len(), 2);
        assert_eq!(m.failed.len(), 2);
        let mut listed: Vec<String> = m.frames.iter().flat_map(|f| f.files.clone()).collect();
        listed.push(MANIFEST_FILE.into());
        listed.sort();
        let mut on_disk = Vec::new();
        for entry in walk(&cfg.output_dir) {
            on_disk.push(entry.strip_prefix(&cfg.output_dir).unwrap().to_string_lossy().replace('\\', "/"));
        }
        on_disk.sort();
        assert_eq!(listed, on_disk);
        let l = load_image(cfg.output_dir.join("s0/00000_cam1_l.png"), None).unwrap();
        assert_eq!(l.dims(), (24, 16));
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }
}
