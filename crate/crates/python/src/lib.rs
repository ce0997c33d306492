//! Python bindings. Images cross the boundary as flat row-major lists with
//! interleaved channels.

use std::path::PathBuf;

use dpsynth::calib::{self, GridSpec, PsfFitGrids};
use dpsynth::imgcore::{self, BitDepth};
use dpsynth::lensfx::{self, NoiseConfig, NoiseKey, PRESET_COEFFS};
use dpsynth::metrics::{self, EdgeLossConfig};
use dpsynth::render::{self, RenderOptions};
use dpsynth::{optics, pipeline, psfbank};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: dpsynth::Error) -> PyErr {
    match e {
        dpsynth::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Image", module = "dpsynth", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: dpsynth::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: dpsynth::Image::from_vec(width, height, channels, data).map_err(err)? })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, channels: usize, value: f64) -> PyResult<Self> {
        Ok(Self { inner: dpsynth::Image::filled(width, height, channels, value).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: imgcore::load_image(path, None).map_err(err)? })
    }

    #[pyo3(signature = (path, bit_depth = 16))]
    fn save(&self, path: PathBuf, bit_depth: u32) -> PyResult<()> {
        let depth = BitDepth::from_bits(bit_depth).map_err(err)?;
        imgcore::save_image(&self.inner, path, depth).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        let i = &self.inner;
        if x >= i.width() || y >= i.height() || c >= i.channels() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(i.get(x, y, c))
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

#[pyclass(name = "Kernel", module = "dpsynth", from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: dpsynth::Kernel2D,
}

#[pymethods]
impl PyKernel {
    #[new]
    fn new(size: usize, taps: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: dpsynth::Kernel2D::new(size, taps).map_err(err)? })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn taps(&self) -> Vec<f64> {
        self.inner.taps().to_vec()
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    /// Mass-weighted (dx, dy) offset from the center tap.
    fn centroid(&self) -> (f64, f64) {
        self.inner.centroid()
    }

    fn __repr__(&self) -> String {
        format!("Kernel({0}x{0})", self.inner.size())
    }
}

#[pyclass(name = "Camera", module = "dpsynth", from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: dpsynth::CameraConfig,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (id, focal_length_mm, f_number, focus_distance_m, pixels_per_mm = None, distortion = None))]
    fn new(
        id: String,
        focal_length_mm: f64,
        f_number: f64,
        focus_distance_m: f64,
        pixels_per_mm: Option<f64>,
        distortion: Option<[f64; 3]>,
    ) -> PyResult<Self> {
        let mut cam = dpsynth::CameraConfig::new(id, focal_length_mm, f_number, focus_distance_m);
        if let Some(p) = pixels_per_mm {
            cam = cam.with_pixels_per_mm(p);
        }
        if let Some(d) = distortion {
            cam = cam.with_distortion(d);
        }
        cam.validate().map_err(err)?;
        Ok(Self { inner: cam })
    }

    /// The five built-in cameras.
    #[staticmethod]
    fn presets() -> Vec<Self> {
        pipeline::config::preset_cameras().into_iter().map(|inner| Self { inner }).collect()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn distortion(&self) -> [f64; 3] {
        self.inner.distortion
    }

    /// Signed circle-of-confusion radius in pixels at `depth_m`.
    fn coc_radius(&self, depth_m: f64) -> PyResult<f64> {
        optics::coc_radius(&self.inner, depth_m).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!("Camera({:?}, f={}mm, N={}, s={}m)", c.id, c.focal_length_mm, c.f_number, c.focus_distance_m)
    }
}

#[pyclass(name = "PsfParams", module = "dpsynth", from_py_object)]
#[derive(Clone)]
struct PyPsfParams {
    inner: dpsynth::PsfParams,
}

#[pymethods]
impl PyPsfParams {
    #[new]
    #[pyo3(signature = (n, alpha, beta, radius, kappa = 0.14))]
    fn new(n: u32, alpha: f64, beta: f64, radius: f64, kappa: f64) -> PyResult<Self> {
        let p = dpsynth::PsfParams::new(n, alpha, beta, kappa, radius);
        p.shape.validate().map_err(err)?;
        Ok(Self { inner: p })
    }

    #[getter]
    fn n(&self) -> u32 {
        self.inner.shape.n
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.shape.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.shape.beta
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.shape.kappa
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.shape;
        format!("PsfParams(n={}, alpha={}, beta={}, kappa={}, radius={})", s.n, s.alpha, s.beta, s.kappa, self.inner.radius)
    }
}

/// Left, right and combined kernels of one PSF.
#[pyfunction]
fn split_dp_psf(params: &PyPsfParams) -> PyResult<(PyKernel, PyKernel, PyKernel)> {
    let p = psfbank::split_dp_psf(&params.inner).map_err(err)?;
    Ok((PyKernel { inner: p.left }, PyKernel { inner: p.right }, PyKernel { inner: p.combined }))
}

/// Renders (left, right, combined) views of `sharp` with a per-pixel depth
/// given in meters as a flat row-major list.
#[pyfunction]
#[pyo3(signature = (sharp, depth_m, camera, n = 6, alpha = 0.6, beta = 0.3, kappa = 0.14, max_layers = None))]
#[allow(clippy::too_many_arguments)]
fn render_dp_frame(
    sharp: &PyImage,
    depth_m: Vec<f64>,
    camera: &PyCamera,
    n: u32,
    alpha: f64,
    beta: f64,
    kappa: f64,
    max_layers: Option<usize>,
) -> PyResult<(PyImage, PyImage, PyImage)> {
    let (w, h) = sharp.inner.dims();
    let depth = dpsynth::DepthMap::new(w, h, depth_m).map_err(err)?;
    let mut opts = RenderOptions::default();
    if let Some(m) = max_layers {
        opts.max_layers = m;
    }
    let shape = dpsynth::PsfShape::new(n, alpha, beta, kappa);
    let f = render::render_dp_frame(&sharp.inner, &depth, &camera.inner, &shape, &dpsynth::PsfBank::empty(kappa), &opts)
        .map_err(err)?;
    Ok((PyImage { inner: f.left }, PyImage { inner: f.right }, PyImage { inner: f.combined_blur }))
}

fn coeffs(c: Option<[f64; 3]>, preset: Option<usize>) -> PyResult<[f64; 3]> {
    match (c, preset) {
        (Some(c), None) => Ok(c),
        (None, Some(i)) if (1..=PRESET_COEFFS.len()).contains(&i) => Ok(PRESET_COEFFS[i - 1]),
        _ => Err(PyValueError::new_err("give exactly one of coeffs or preset (1 to 5)")),
    }
}

/// Applies radial distortion. Returns the image and the count of pixels
/// that fell back to identity.
#[pyfunction]
#[pyo3(signature = (img, coeffs = None, preset = None))]
fn distort(img: &PyImage, coeffs: Option<[f64; 3]>, preset: Option<usize>) -> PyResult<(PyImage, usize)> {
    let w = lensfx::distort(&img.inner, &self::coeffs(coeffs, preset)?).map_err(err)?;
    Ok((PyImage { inner: w.image }, w.fallback_pixels))
}

#[pyfunction]
#[pyo3(signature = (img, coeffs = None, preset = None))]
fn undistort(img: &PyImage, coeffs: Option<[f64; 3]>, preset: Option<usize>) -> PyResult<(PyImage, usize)> {
    let w = lensfx::undistort(&img.inner, &self::coeffs(coeffs, preset)?).map_err(err)?;
    Ok((PyImage { inner: w.image }, w.fallback_pixels))
}

#[pyfunction]
#[pyo3(signature = (img, sigma, seed = 0, frame = 0, view = 0))]
fn add_signal_noise(img: &PyImage, sigma: f64, seed: u64, frame: u64, view: u64) -> PyResult<PyImage> {
    let out = lensfx::add_signal_noise(&img.inner, &NoiseConfig { sigma, seed }, NoiseKey { frame, view }).map_err(err)?;
    Ok(PyImage { inner: out })
}

#[pyfunction]
#[pyo3(signature = (a, b, cap = metrics::PSNR_CAP_DB))]
fn psnr(a: &PyImage, b: &PyImage, cap: f64) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner, cap).map_err(err)
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn mae(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::mae(&a.inner, &b.inner).map_err(err)
}

/// Returns a dict with keys total, mse, x and y.
#[pyfunction]
fn edge_loss(out: &PyImage, gt: &PyImage) -> PyResult<std::collections::HashMap<&'static str, f64>> {
    let e = metrics::edge_loss(&out.inner, &gt.inner, &EdgeLossConfig::default()).map_err(err)?;
    Ok([("total", e.total), ("mse", e.mse), ("x", e.x), ("y", e.y)].into_iter().collect())
}

#[pyfunction]
fn ncc_kernels(a: &PyKernel, b: &PyKernel) -> f64 {
    metrics::ncc_kernels(&a.inner, &b.inner)
}

#[pyfunction]
#[pyo3(signature = (rows, cols, spacing, radius, width, height))]
fn make_disk_pattern(rows: usize, cols: usize, spacing: f64, radius: f64, width: usize, height: usize) -> PyResult<PyImage> {
    let g = GridSpec { rows, cols, spacing, width, height };
    Ok(PyImage { inner: calib::make_disk_pattern(&g, radius).map_err(err)? })
}

/// Estimates a PSF from a sharp/blurred pair. Returns (kernel, converged).
#[pyfunction]
#[pyo3(signature = (sharp, blurred, kernel_size = 31, l1_weight = calib::DEFAULT_L1_WEIGHT, max_iters = 5000))]
fn estimate_psf(
    sharp: &PyImage,
    blurred: &PyImage,
    kernel_size: usize,
    l1_weight: f64,
    max_iters: usize,
) -> PyResult<(PyKernel, bool)> {
    let e = calib::estimate_psf(&sharp.inner.to_gray(), &blurred.inner.to_gray(), kernel_size, l1_weight, max_iters)
        .map_err(err)?;
    Ok((PyKernel { inner: e.kernel }, e.converged))
}

/// Best-matching combined-PSF parameters on the default grid at the given
/// radii. Returns (params, objective).
#[pyfunction]
fn fit_psf_params(kernel: &PyKernel, radii: Vec<f64>) -> PyResult<(PyPsfParams, f64)> {
    let f = calib::fit_psf_params(&kernel.inner, &PsfFitGrids::standard(radii)).map_err(err)?;
    Ok((PyPsfParams { inner: f.params }, f.objective))
}

/// Runs the generator from a TOML config. Returns (written, failed) counts.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir = None))]
fn generate(config_path: PathBuf, out_dir: Option<PathBuf>) -> PyResult<(usize, usize)> {
    let mut cfg = pipeline::GenerationConfig::load(config_path).map_err(err)?;
    if let Some(o) = out_dir {
        cfg.output_dir = o;
    }
    let m = pipeline::generate(&cfg).map_err(err)?;
    Ok((m.frames.len(), m.failed.len()))
}

#[pymodule]
#[pyo3(name = "dpsynth")]
fn dpsynth_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyPsfParams>()?;
    m.add("PRESET_DISTORTION", PRESET_COEFFS.to_vec())?;
    m.add_function(wrap_pyfunction!(split_dp_psf, m)?)?;
    m.add_function(wrap_pyfunction!(render_dp_frame, m)?)?;
    m.add_function(wrap_pyfunction!(distort, m)?)?;
    m.add_function(wrap_pyfunction!(undistort, m)?)?;
    m.add_function(wrap_pyfunction!(add_signal_noise, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(edge_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ncc_kernels, m)?)?;
    m.add_function(wrap_pyfunction!(make_disk_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_psf, m)?)?;
    m.add_function(wrap_pyfunction!(fit_psf_params, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
