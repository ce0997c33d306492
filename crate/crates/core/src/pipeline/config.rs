use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BitDepth, DepthLoadOptions};
use crate::lensfx::PRESET_COEFFS;
use crate::optics::CameraConfig;
use crate::psfbank::{PsfShape, RADIUS_STEP};
use crate::render::MAX_LAYERS;

pub const PRESET_PAPER_SYNTHIA: &str = "paper-synthia";

/// Focal length (mm), f-number and focus distance (m) of the preset
/// cameras, in the order of [`PRESET_COEFFS`].
pub const PRESET_CAMERAS: [(f64, f64, f64); 5] = [
    (4.0, 5.0, 6.0),
    (5.0, 8.0, 6.0),
    (7.0, 5.0, 8.0),
    (10.0, 13.0, 12.0),
    (22.0, 10.0, 30.0),
];

pub fn preset_cameras() -> Vec<CameraConfig> {
    PRESET_CAMERAS
        .iter()
        .zip(PRESET_COEFFS)
        .enumerate()
        .map(|(i, (&(f, n, s), c))| CameraConfig::new(format!("cam{}", i + 1), f, n, s).with_distortion(c))
        .collect()
}

/// `0.05, 0.055, ..., 0.5`.
pub fn preset_sigma_grid() -> Vec<f64> {
    (10..=100).map(|k| k as f64 * 0.005).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfGridConfig {
    pub n: Vec<u32>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: f64,
    /// Radii exported by `psf export` / `psf gallery`.
    pub radius: Vec<f64>,
}

fn default_export_radii() -> Vec<f64> {
    vec![5.0, 10.0, 20.0]
}

impl Default for PsfGridConfig {
    fn default() -> Self {
        Self {
            n: vec![3, 6, 9],
            alpha: vec![0.4, 0.6, 0.8, 1.0],
            beta: vec![0.1, 0.2, 0.3, 0.4],
            kappa: 0.14,
            radius: default_export_radii(),
        }
    }
}

impl PsfGridConfig {
    pub fn shapes(&self) -> Vec<PsfShape> {
        let mut out = Vec::new();
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

/// One image + depth pair. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputEntry {
    pub image: PathBuf,
    pub depth: PathBuf,
    #[serde(default = "default_sequence")]
    pub sequence: String,
    /// Frame index within the sequence; defaults to the entry's position
    /// among the sequence's entries.
    #[serde(default)]
    pub frame: Option<u64>,
}

fn default_sequence() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub preset: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub bit_depth: BitDepth,
    pub max_layers: usize,
    pub depth: DepthLoadOptions,
    pub cameras: Vec<CameraConfig>,
    pub psf: PsfGridConfig,
    pub sigma: Vec<f64>,
    pub inputs: Vec<InputEntry>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            preset: PRESET_PAPER_SYNTHIA.into(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            bit_depth: BitDepth::Sixteen,
            max_layers: MAX_LAYERS,
            depth: DepthLoadOptions::default(),
            cameras: preset_cameras(),
            psf: PsfGridConfig::default(),
            sigma: preset_sigma_grid(),
            inputs: Vec::new(),
        }
    }
}

/// A frame with resolved paths and its index in the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameJob {
    pub image: PathBuf,
    pub depth: PathBuf,
    pub sequence: String,
    pub frame: u64,
}

impl GenerationConfig {
    /// Parses TOML; unset keys take the preset's values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GenerationConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.preset != PRESET_PAPER_SYNTHIA {
            return Err(Error::Config(format!(
                "unknown preset {:?} (available: {PRESET_PAPER_SYNTHIA})",
                cfg.preset
            )));
        }
        Ok(cfg)
    }

    /// Loads a config file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for e in &mut self.inputs {
            fix(&mut e.image);
            fix(&mut e.depth);
        }
    }

    /// Checks parameters and that every input file exists. Each error
    /// names the offending entry.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.max_layers == 0 || self.max_layers > MAX_LAYERS {
            return cfg_err(format!("max_layers {} must be in 1..={MAX_LAYERS}", self.max_layers));
        }
        if !(self.depth.scale > 0.0 && self.depth.scale.is_finite()) {
            return cfg_err(format!("depth.scale {} must be > 0", self.depth.scale));
        }
        if !(self.depth.far_plane_m > 0.0 && self.depth.far_plane_m.is_finite()) {
            return cfg_err(format!("depth.far_plane_m {} must be > 0", self.depth.far_plane_m));
        }
        if self.cameras.is_empty() {
            return cfg_err("at least one camera is required".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for cam in &self.cameras {
            cam.validate().map_err(|e| Error::Config(format!("camera {:?}: {e}", cam.id)))?;
            if cam.id.is_empty() || cam.id.contains(['/', '\\']) {
                return cfg_err(format!("camera id {:?} must be a nonempty file-name-safe string", cam.id));
            }
            if !ids.insert(cam.id.clone()) {
                return cfg_err(format!("duplicate camera id {:?}", cam.id));
            }
            if cam.distortion.iter().any(|c| !c.is_finite()) {
                return cfg_err(format!("camera {:?}: distortion coefficients must be finite", cam.id));
            }
        }
        let shapes = self.psf.shapes();
        if shapes.is_empty() {
            return cfg_err("psf grids must be nonempty".into());
        }
        for s in &shapes {
            s.validate().map_err(|e| Error::Config(format!("psf grid: {e}")))?;
        }
        if self.psf.radius.iter().any(|r| !r.is_finite()) {
            return cfg_err("psf.radius values must be finite".into());
        }
        if self.sigma.is_empty() {
            return cfg_err("sigma grid must be nonempty".into());
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return cfg_err(format!("sigma value {s} must be >= 0"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, job) in self.frame_jobs().iter().enumerate() {
            for p in [&job.image, &job.depth] {
                if !p.is_file() {
                    return cfg_err(format!("inputs[{i}]: missing file {}", p.display()));
                }
            }
            if job.sequence.is_empty() || job.sequence.contains(['/', '\\']) || job.sequence == ".." {
                return cfg_err(format!("inputs[{i}]: invalid sequence name {:?}", job.sequence));
            }
            if !seen.insert((job.sequence.clone(), job.frame)) {
                return cfg_err(format!("inputs[{i}]: duplicate frame {} in sequence {:?}", job.frame, job.sequence));
            }
        }
        Ok(())
    }

    /// Input entries with their frame indices filled in.
    pub fn frame_jobs(&self) -> Vec<FrameJob> {
        let mut counters = std::collections::BTreeMap::<&str, u64>::new();
        self.inputs
            .iter()
            .map(|e| {
                let pos = counters.entry(e.sequence.as_str()).or_insert(0);
                let frame = e.frame.unwrap_or(*pos);
                *pos += 1;
                FrameJob {
                    image: e.image.clone(),
                    depth: e.depth.clone(),
                    sequence: e.sequence.clone(),
                    frame,
                }
            })
            .collect()
    }

    /// Shape grid used by `psf export`, at the configured radii quantized
    /// to the bank step.
    pub fn export_radii(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.psf.radius.iter().map(|&r| (r / RADIUS_STEP).round() * RADIUS_STEP).collect();
        r.dedup();
        r
    }
}
