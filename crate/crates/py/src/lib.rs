//! Python bindings.

use nalgebra::Vector3;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

use splatcal::cdgd::continuous_weight;
use splatcal::dcp::DcpReport;
use splatcal::diagnostics::{decompose as decompose_impl, haze_approx_error};
use splatcal::scenegen::{self, FloaterSpec, SceneSpec, Template};
use splatcal::trainer::{self, events_to_text, Ablation};
use splatcal::{io, metrics, rasterizer, CalibConfig, GaussianPrimitive};

fn err(e: splatcal::Error) -> PyErr {
    match &e {
        splatcal::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if splatcal::cli::is_validation_error(e) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[pyclass(name = "Gaussian", from_py_object)]
#[derive(Clone)]
pub struct PyGaussian {
    inner: GaussianPrimitive,
}

#[pymethods]
impl PyGaussian {
    #[new]
    #[pyo3(signature = (position, scale, opacity, color, rotation = [1.0, 0.0, 0.0, 0.0]))]
    fn new(position: [f64; 3], scale: [f64; 3], opacity: f64, color: [f64; 3], rotation: [f64; 4]) -> PyResult<Self> {
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(PyValueError::new_err("scale must be positive"));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(PyValueError::new_err("opacity must be in (0, 1)"));
        }
        Ok(Self {
            inner: GaussianPrimitive::new(v3(position), v3(scale), rotation, opacity, v3(color)),
        })
    }

    #[getter]
    fn position(&self) -> [f64; 3] {
        arr(&self.inner.position)
    }

    #[getter]
    fn scale(&self) -> [f64; 3] {
        arr(&self.inner.scale())
    }

    #[getter]
    fn rotation(&self) -> [f64; 4] {
        self.inner.rotation
    }

    #[getter]
    fn opacity(&self) -> f64 {
        self.inner.opacity()
    }

    #[getter]
    fn color(&self) -> [f64; 3] {
        arr(&self.inner.color)
    }

    #[getter]
    fn dcp_score(&self) -> f64 {
        self.inner.dcp_score
    }

    fn __repr__(&self) -> String {
        let p = self.inner.position;
        format!("Gaussian(position=[{}, {}, {}], opacity={:.4})", p.x, p.y, p.z, self.inner.opacity())
    }
}

#[pyclass(name = "Camera", from_py_object)]
#[derive(Clone)]
pub struct PyCamera {
    inner: splatcal::Camera,
}

#[pymethods]
impl PyCamera {
    #[staticmethod]
    #[pyo3(signature = (id, eye, target, width, height, fov_y_degrees = 50.0, up = [0.0, 1.0, 0.0]))]
    fn look_at(id: u32, eye: [f64; 3], target: [f64; 3], width: usize, height: usize, fov_y_degrees: f64, up: [f64; 3]) -> PyResult<Self> {
        let inner = splatcal::Camera::look_at(id, v3(eye), v3(target), v3(up), width, height, fov_y_degrees);
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn id(&self) -> u32 {
        self.inner.id
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        arr(&self.inner.center())
    }
}

/// RGB image with values in [0, 1], row-major.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: splatcal::Image,
}

#[pymethods]
impl PyImage {
    #[staticmethod]
    fn from_list(width: usize, height: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: splatcal::Image::from_vec(width, height, data).map_err(err)?,
        })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            inner: splatcal::Image::filled(width, height, rgb),
        }
    }

    #[staticmethod]
    fn load_ppm(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::ppm::read(path.as_ref()).map_err(err)?,
        })
    }

    fn save_ppm(&self, path: &str) -> PyResult<()> {
        io::ppm::write(path.as_ref(), &self.inner).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<[f64; 3]> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err("pixel out of range"));
        }
        Ok(self.inner.get(x, y))
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }
}

/// Training and analysis hyperparameters. Keyword arguments override the
/// defaults by field name.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: CalibConfig,
}

fn override_value(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_instance_of::<PyBool>() {
        Ok(v.extract::<bool>()?.to_string())
    } else if v.is_instance_of::<PyInt>() {
        Ok(v.extract::<i64>()?.to_string())
    } else if v.is_instance_of::<PyFloat>() {
        Ok(format!("{:?}", v.extract::<f64>()?))
    } else if v.is_instance_of::<PyString>() {
        Ok(format!("{:?}", v.extract::<String>()?))
    } else {
        Err(PyValueError::new_err("config values must be bool, int, float or str"))
    }
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut items = Vec::new();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                items.push(format!("{}={}", k.extract::<String>()?, override_value(&v)?));
            }
        }
        Ok(Self {
            inner: CalibConfig::default().with_overrides(&items).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn total_iters(&self) -> u32 {
        self.inner.total_iters
    }

    #[getter]
    fn prune_threshold(&self) -> f64 {
        self.inner.prune_threshold()
    }
}

#[pyclass(name = "Scene", from_py_object)]
#[derive(Clone)]
pub struct PyScene {
    inner: splatcal::Scene,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    #[pyo3(signature = (template = "two-plane-box", surface_count = 2000, cameras = 6, image_size = 64, seed = 0))]
    fn generate(template: &str, surface_count: usize, cameras: usize, image_size: usize, seed: u64) -> PyResult<Self> {
        let template: Template = template.parse().map_err(err)?;
        let spec = SceneSpec {
            template,
            surface_count,
            camera_count: cameras,
            image_size,
            seed,
            ..Default::default()
        };
        Ok(Self {
            inner: scenegen::generate(&spec).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: splatcal::load_scene(path.as_ref()).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        splatcal::save_scene(&self.inner, path.as_ref()).map_err(err)
    }

    /// Returns the new scene and one flag per Gaussian marking floaters.
    #[pyo3(signature = (count = 500, seed = 0, opacity_mean = 0.08))]
    fn inject_floaters(&self, count: usize, seed: u64, opacity_mean: f64) -> PyResult<(Self, Vec<bool>)> {
        let fspec = FloaterSpec {
            count,
            opacity_mean,
            ..Default::default()
        };
        let (inner, flags) = scenegen::inject_floaters(&self.inner, &fspec, seed).map_err(err)?;
        Ok((Self { inner }, flags))
    }

    #[getter]
    fn gaussians(&self) -> Vec<PyGaussian> {
        wrap(&self.inner.gaussians)
    }

    #[getter]
    fn train_cameras(&self) -> Vec<PyCamera> {
        self.inner.train.iter().map(|v| PyCamera { inner: v.camera.clone() }).collect()
    }

    #[getter]
    fn test_cameras(&self) -> Vec<PyCamera> {
        self.inner.test.iter().map(|v| PyCamera { inner: v.camera.clone() }).collect()
    }

    #[getter]
    fn train_images(&self) -> Vec<PyImage> {
        self.inner.train.iter().map(|v| PyImage { inner: v.image.clone() }).collect()
    }

    #[getter]
    fn test_images(&self) -> Vec<PyImage> {
        self.inner.test.iter().map(|v| PyImage { inner: v.image.clone() }).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.gaussians.len()
    }
}

fn wrap(gs: &[GaussianPrimitive]) -> Vec<PyGaussian> {
    gs.iter().map(|g| PyGaussian { inner: g.clone() }).collect()
}

fn unwrap(gs: Vec<PyGaussian>) -> Vec<GaussianPrimitive> {
    gs.into_iter().map(|g| g.inner).collect()
}

#[pyfunction]
fn render(py: Python<'_>, gaussians: Vec<PyGaussian>, camera: PyCamera) -> PyResult<PyImage> {
    let gs = unwrap(gaussians);
    let out = py.detach(|| rasterizer::render(&gs, &camera.inner, None)).map_err(err)?;
    Ok(PyImage { inner: out.color })
}

#[pyfunction]
fn psnr(a: PyImage, b: PyImage) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn ssim(a: PyImage, b: PyImage) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).map_err(err)
}

/// Fraction of pixels flagged by the dark-channel anomaly test.
#[pyfunction]
#[pyo3(signature = (image, tau1 = 0.10, tau2 = 0.05, window = 15))]
fn violation_ratio(image: PyImage, tau1: f64, tau2: f64, window: usize) -> PyResult<f64> {
    Ok(DcpReport::with_params(&image.inner, tau1, tau2, window).map_err(err)?.violation_ratio)
}

#[pyfunction]
#[pyo3(signature = (d, lambda_base = 0.3, kappa = 10.0, tau = 1.0))]
fn depth_weight(d: f64, lambda_base: f64, kappa: f64, tau: f64) -> f64 {
    continuous_weight(d, lambda_base, kappa, tau)
}

/// Haze-model error of the floater/surface split for one camera.
#[pyfunction]
fn haze_error(gaussians: Vec<PyGaussian>, camera: PyCamera, floater_flags: Vec<bool>) -> PyResult<f64> {
    let d = decompose_impl(&unwrap(gaussians), &camera.inner, &floater_flags).map_err(err)?;
    haze_approx_error(&d).map_err(err)
}

/// Train and return `(gaussians, report)`; the report is a dict with the
/// per-interval rows, final held-out PSNR and the event log lines.
#[pyfunction]
#[pyo3(signature = (scene, ablation = "cdgd+dcp_gp", seed = 0, config = None))]
fn train<'py>(
    py: Python<'py>,
    scene: PyScene,
    ablation: &str,
    seed: u64,
    config: Option<PyConfig>,
) -> PyResult<(Vec<PyGaussian>, Bound<'py, PyDict>)> {
    let ablation: Ablation = ablation.parse().map_err(err)?;
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let (state, report) = py.detach(|| trainer::train(&scene.inner, &cfg, ablation, seed)).map_err(err)?;
    let out = PyDict::new(py);
    let rows: Vec<Bound<'py, PyDict>> = report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("iteration", r.iteration)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("test_psnr", r.test_psnr)?;
            d.set_item("test_ssim", r.test_ssim)?;
            d.set_item("gaussian_count", r.gaussian_count)?;
            d.set_item("pruned_total", r.pruned_total)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    out.set_item("rows", rows)?;
    out.set_item("final_psnr", report.final_psnr())?;
    out.set_item("events", events_to_text(&state.events).lines().map(str::to_string).collect::<Vec<_>>())?;
    out.set_item("origins", state.origin.clone())?;
    Ok((wrap(&state.gaussians), out))
}

#[pymodule]
fn splatcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(violation_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(depth_weight, m)?)?;
    m.add_function(wrap_pyfunction!(haze_error, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
