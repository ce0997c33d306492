//! PNG (8/16-bit, gray or RGB) and PFM readers/writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{DepthMap, Image, Kernel2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::InvalidParameter(format!("bit depth {other} (expected 8 or 16)"))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn is_pfm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

/// Loads a PNG or PFM raster as samples in `[0, 1]`.
///
/// Integer codes are divided by the maximum code of their bit depth. PFM
/// samples are clamped to `[0, 1]`; NaN or infinite samples are rejected.
/// When `bit_depth_hint` is given, a PNG of a different depth is an error.
pub fn load_image(path: impl AsRef<Path>, bit_depth_hint: Option<BitDepth>) -> Result<Image> {
    let path = path.as_ref();
    if is_pfm(path) {
        let (w, h, c, data) = read_pfm(path)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Decode {
                path: path.into(),
                message: "PFM holds NaN or infinite samples".into(),
            });
        }
        return Image::from_vec(w, h, c, data).map(Image::clamp01);
    }
    let (w, h, c, depth, codes) = read_png_codes(path)?;
    if let Some(hint) = bit_depth_hint {
        if hint != depth {
            return Err(Error::Decode {
                path: path.into(),
                message: format!("expected {}-bit data, found {}-bit", hint.bits(), depth.bits()),
            });
        }
    }
    let inv = 1.0 / depth.max_code();
    Ok(Image::from_raw(
        w,
        h,
        c,
        codes.into_iter().map(|v| v as f64 * inv).collect(),
    ))
}

fn read_png_codes(path: &Path) -> Result<(usize, usize, usize, BitDepth, Vec<u32>)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Decode {
            path: path.into(),
            message: other.to_string(),
        },
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let widen8 = |v: Vec<u8>| v.into_iter().map(u32::from).collect::<Vec<_>>();
    let widen16 = |v: Vec<u16>| v.into_iter().map(u32::from).collect::<Vec<_>>();
    Ok(match img {
        DynamicImage::ImageLuma8(b) => (w, h, 1, BitDepth::Eight, widen8(b.into_raw())),
        DynamicImage::ImageRgb8(b) => (w, h, 3, BitDepth::Eight, widen8(b.into_raw())),
        DynamicImage::ImageLuma16(b) => (w, h, 1, BitDepth::Sixteen, widen16(b.into_raw())),
        DynamicImage::ImageRgb16(b) => (w, h, 3, BitDepth::Sixteen, widen16(b.into_raw())),
        other => {
            return Err(Error::UnsupportedChannels(other.color().channel_count() as usize));
        }
    })
}

/// Quantizes `img` (clamped to `[0, 1]`) with round-half-up and writes a PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>, bit_depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    if is_pfm(path) {
        return write_pfm(path, img.width(), img.height(), img.channels(), img.data());
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let max = bit_depth.max_code();
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * max + 0.5).floor();
    let enc_err = |e: image::ImageError| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Encode {
            path: path.into(),
            message: other.to_string(),
        },
    };
    match (bit_depth, img.channels()) {
        (BitDepth::Eight, 1) => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
                .expect("buffer size matches")
                .save_with_format(path, ImageFormat::Png)
                .map_err(enc_err)
        }
        (BitDepth::Eight, _) => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v) as u8).collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw)
                .expect("buffer size matches")
                .save_with_format(path, ImageFormat::Png)
                .map_err(enc_err)
        }
        (BitDepth::Sixteen, 1) => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
                .expect("buffer size matches")
                .save_with_format(path, ImageFormat::Png)
                .map_err(enc_err)
        }
        (BitDepth::Sixteen, _) => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v) as u16).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw)
                .expect("buffer size matches")
                .save_with_format(path, ImageFormat::Png)
                .map_err(enc_err)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Png16,
    Pfm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthLoadOptions {
    /// Meters per integer code (PNG only).
    pub scale: f64,
    pub format: DepthFormat,
    /// Distance substituted for zero depth codes.
    pub far_plane_m: f64,
}

impl Default for DepthLoadOptions {
    fn default() -> Self {
        Self {
            scale: 0.01,
            format: DepthFormat::Png16,
            far_plane_m: 1000.0,
        }
    }
}

/// Loads a depth buffer in meters.
///
/// PNG codes are multiplied by `scale`; PFM values pass through. For RGB
/// PNGs the first channel carries the depth code. Zero depths become
/// `far_plane_m`.
pub fn load_depth(path: impl AsRef<Path>, opts: &DepthLoadOptions) -> Result<DepthMap> {
    let path = path.as_ref();
    if !(opts.scale > 0.0 && opts.scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("depth scale {} must be > 0", opts.scale)));
    }
    if !(opts.far_plane_m > 0.0 && opts.far_plane_m.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "far plane {} must be > 0",
            opts.far_plane_m
        )));
    }
    let (w, h, raw) = match opts.format {
        DepthFormat::Png16 => {
            let (w, h, c, _, codes) = read_png_codes(path)?;
            let raw = codes.iter().step_by(c).map(|&v| v as f64 * opts.scale).collect();
            (w, h, raw)
        }
        DepthFormat::Pfm => {
            let (w, h, c, data) = read_pfm(path)?;
            (w, h, data.into_iter().step_by(c).collect::<Vec<_>>())
        }
    };
    let mut data = raw;
    for (i, d) in data.iter_mut().enumerate() {
        if !d.is_finite() || *d < 0.0 {
            return Err(Error::InvalidDepth(format!(
                "{}: depth {} at pixel {i}",
                path.display(),
                d
            )));
        }
        if *d == 0.0 {
            *d = opts.far_plane_m;
        }
    }
    DepthMap::new(w, h, data)
}

/// Reads a PFM file as `(width, height, channels, samples)` in top-down
/// row order, without clamping.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Decode {
        path: path.into(),
        message: m.to_string(),
    };
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PFM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("missing PF/Pf magic")),
    };
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let n = w * h * channels;
    let body = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated PFM raster"))?;
    let mut data = vec![0.0; n];
    let row = w * channels;
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let arr = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        };
        // PFM rows run bottom-to-top
        let (r, c) = (i / row, i % row);
        data[(h - 1 - r) * row + c] = v as f64;
    }
    Ok((w, h, channels, data))
}

/// Writes a little-endian PFM (samples stored as f32).
pub fn write_pfm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f64],
) -> Result<()> {
    let path = path.as_ref();
    let magic = match channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::UnsupportedChannels(c)),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(out, "{magic}\n{width} {height}\n-1.0\n").map_err(io)?;
    let row = width * channels;
    for r in (0..height).rev() {
        for v in &data[r * row..(r + 1) * row] {
            out.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn save_kernel_pfm(kernel: &Kernel2D, path: impl AsRef<Path>) -> Result<()> {
    write_pfm(path, kernel.size(), kernel.size(), 1, kernel.taps())
}

pub fn load_kernel_pfm(path: impl AsRef<Path>) -> Result<Kernel2D> {
    let (w, h, c, data) = read_pfm(path)?;
    if w != h || c != 1 {
        return Err(Error::InvalidKernel(format!("{w}x{h}x{c} PFM is not a square single-channel kernel")));
    }
    Kernel2D::new(w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn png8_extremes() {
        let dir = tmp();
        let p = dir.path().join("a.png");
        let img = Image::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        save_image(&img, &p, BitDepth::Eight).unwrap();
        let back = load_image(&p, Some(BitDepth::Eight)).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0]);
        assert!(load_image(&p, Some(BitDepth::Sixteen)).is_err());
    }

    #[test]
    fn png16_code_scaling() {
        let dir = tmp();
        let p = dir.path().join("a.png");
        ImageBuffer::<Luma<u16>, _>::from_raw(1, 1, vec![32768u16])
            .unwrap()
            .save(&p)
            .unwrap();
        let img = load_image(&p, None).unwrap();
        assert!((img.data()[0] - 32768.0 / 65535.0).abs() < 1e-15);
        assert!((img.data()[0] - 0.50000763).abs() < 1e-8);
    }

    #[test]
    fn half_rounds_up_at_16_bit() {
        let dir = tmp();
        let p = dir.path().join("a.png");
        save_image(&Image::filled(1, 1, 1, 0.5).unwrap(), &p, BitDepth::Sixteen).unwrap();
        let (_, _, _, _, codes) = read_png_codes(&p).unwrap();
        // round(0.5 * 65535) = round(32767.5) = 32768
        assert_eq!(codes, vec![32768]);
    }

    #[test]
    fn rgb_round_trip_within_half_code() {
        let dir = tmp();
        let p = dir.path().join("rgb.png");
        let img = Image::from_vec(
            4,
            3,
            3,
            (0..36).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
        )
        .unwrap();
        save_image(&img, &p, BitDepth::Eight).unwrap();
        let back = load_image(&p, None).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_alpha_png() {
        let dir = tmp();
        let p = dir.path().join("rgba.png");
        image::RgbaImage::new(2, 2).save(&p).unwrap();
        assert!(matches!(load_image(&p, None), Err(Error::UnsupportedChannels(4))));
    }

    #[test]
    fn pfm_round_trip_and_clamp() {
        let dir = tmp();
        let p = dir.path().join("a.pfm");
        let data = vec![-0.5, 0.25, 0.75, 2.0, 0.5, 0.125];
        write_pfm(&p, 3, 2, 1, &data).unwrap();
        let (w, h, c, raw) = read_pfm(&p).unwrap();
        assert_eq!((w, h, c), (3, 2, 1));
        assert_eq!(raw, data);
        let img = load_image(&p, None).unwrap();
        assert_eq!(img.data(), &[0.0, 0.25, 0.75, 1.0, 0.5, 0.125]);
    }

    #[test]
    fn pfm_rejects_nan() {
        let dir = tmp();
        let p = dir.path().join("nan.pfm");
        write_pfm(&p, 1, 1, 1, &[f64::NAN]).unwrap();
        assert!(load_image(&p, None).is_err());
    }

    #[test]
    fn big_endian_pfm() {
        let dir = tmp();
        let p = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.25f32.to_be_bytes());
        bytes.extend_from_slice(&6.0f32.to_be_bytes());
        fs::write(&p, bytes).unwrap();
        let (_, _, _, raw) = read_pfm(&p).unwrap();
        assert_eq!(raw, vec![0.25, 6.0]);
    }

    #[test]
    fn depth_scaling_and_sentinel() {
        let dir = tmp();
        let p = dir.path().join("d.png");
        ImageBuffer::<Luma<u16>, _>::from_raw(2, 1, vec![1000u16, 0])
            .unwrap()
            .save(&p)
            .unwrap();
        let opts = DepthLoadOptions {
            scale: 0.01,
            format: DepthFormat::Png16,
            far_plane_m: 1000.0,
        };
        let d = load_depth(&p, &opts).unwrap();
        assert!((d.data()[0] - 10.0).abs() < 1e-12);
        assert_eq!(d.data()[1], 1000.0);

        let custom = DepthLoadOptions {
            far_plane_m: 250.0,
            ..opts
        };
        assert_eq!(load_depth(&p, &custom).unwrap().data()[1], 250.0);
    }

    #[test]
    fn depth_pfm_passthrough_and_negative() {
        let dir = tmp();
        let p = dir.path().join("d.pfm");
        write_pfm(&p, 1, 1, 1, &[6.0]).unwrap();
        let opts = DepthLoadOptions {
            format: DepthFormat::Pfm,
            ..Default::default()
        };
        assert_eq!(load_depth(&p, &opts).unwrap().data(), &[6.0]);
        write_pfm(&p, 1, 1, 1, &[-1.0]).unwrap();
        assert!(load_depth(&p, &opts).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(load_image("/nonexistent/x.png", None).is_err());
        assert!(matches!(read_pfm("/nonexistent/x.pfm"), Err(Error::Io { .. })));
    }
}
