//! Python bindings: images, degradations, metrics, the enhancement model,
//! training, evaluation and comparison grids.
//!
//! Configurations cross the boundary as JSON strings with the same schema
//! as the command-line config sections.

use std::path::PathBuf;

use orbit_restore::config::RunConfig;
use orbit_restore::degrade::{self, DegradationRecipe};
use orbit_restore::eval::{self, Enhancer, IdentityEnhancer};
use orbit_restore::model::{build_model, weights_cache_from_env, ModelConfig, UResNet};
use orbit_restore::train::{self, FitOptions};
use orbit_restore::{metrics, Error, ImageTensor};
use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::NotFound(_) => PyFileNotFoundError::new_err(msg),
        Error::Io { .. } => PyIOError::new_err(msg),
        Error::Shape(_)
        | Error::Size(_)
        | Error::Param(_)
        | Error::Config(_)
        | Error::Split(_)
        | Error::EmptyDataset(_)
        | Error::ConfigMismatch(_) => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// RGB image, row-major interleaved, values in [0, 1].
#[pyclass(name = "Image", module = "orbit_restore", skip_from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: ImageTensor,
}

impl From<ImageTensor> for PyImage {
    fn from(inner: ImageTensor) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        ImageTensor::new(height, width, data).map(Self::from).map_err(to_py)
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, value: f32) -> PyResult<Self> {
        ImageTensor::filled(height, width, value).map(Self::from).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ImageTensor::load(path).map(Self::from).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn to_rgb8(&self) -> Vec<u8> {
        self.inner.to_rgb8()
    }

    fn get(&self, y: usize, x: usize, c: usize) -> PyResult<f32> {
        if y >= self.inner.height() || x >= self.inner.width() || c >= 3 {
            return Err(PyValueError::new_err(format!("index ({y}, {x}, {c}) out of range")));
        }
        Ok(self.inner.get(y, x, c))
    }

    fn resize(&self, height: usize, width: usize) -> PyResult<Self> {
        self.inner.resize_bilinear(height, width).map(Self::from).map_err(to_py)
    }

    fn __eq__(&self, other: PyRef<'_, Self>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image(height={}, width={})", self.inner.height(), self.inner.width())
    }
}

#[pyfunction]
fn psnr(a: PyRef<'_, PyImage>, b: PyRef<'_, PyImage>) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).map_err(to_py)
}

#[pyfunction]
fn ssim(a: PyRef<'_, PyImage>, b: PyRef<'_, PyImage>) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).map_err(to_py)
}

#[pyfunction]
fn gaussian_blur(img: PyRef<'_, PyImage>, sigma: f64) -> PyResult<PyImage> {
    degrade::gaussian_blur(&img.inner, sigma).map(PyImage::from).map_err(to_py)
}

#[pyfunction]
fn motion_blur(img: PyRef<'_, PyImage>, length: f64, angle_deg: f64) -> PyResult<PyImage> {
    degrade::motion_blur(&img.inner, length, angle_deg).map(PyImage::from).map_err(to_py)
}

#[pyfunction]
fn adjust_exposure(img: PyRef<'_, PyImage>, gain: f64, gamma: f64) -> PyResult<PyImage> {
    degrade::adjust_exposure(&img.inner, gain, gamma).map(PyImage::from).map_err(to_py)
}

#[pyfunction]
fn add_gaussian_noise(img: PyRef<'_, PyImage>, sigma: f64, seed: u64) -> PyResult<PyImage> {
    degrade::add_gaussian_noise(&img.inner, sigma, seed).map(PyImage::from).map_err(to_py)
}

/// Builds degraded/target pairs; returns the number of pairs written.
#[pyfunction]
#[pyo3(signature = (clean_dir, out_dir, recipe_json=None))]
fn build_dataset(py: Python<'_>, clean_dir: PathBuf, out_dir: PathBuf, recipe_json: Option<&str>) -> PyResult<usize> {
    let recipe: DegradationRecipe = parse_json(recipe_json)?;
    py.detach(|| degrade::build_dataset(&clean_dir, &out_dir, &recipe))
        .map(|m| m.pairs.len())
        .map_err(to_py)
}

#[pyfunction]
fn one_cycle_lr(
    step: usize,
    total_steps: usize,
    max_lr: f64,
    pct_start: f64,
    div_start: f64,
    div_final: f64,
) -> PyResult<f64> {
    train::one_cycle_lr(step, total_steps, max_lr, pct_start, div_start, div_final).map_err(to_py)
}

#[pyclass(name = "Model", module = "orbit_restore")]
pub struct PyModel {
    inner: UResNet<f32>,
}

#[pymethods]
impl PyModel {
    /// Builds a model from a JSON model config. Pretrained encoder weights
    /// are read from `weights_cache` or the environment.
    #[staticmethod]
    #[pyo3(signature = (config_json=None, weights_cache=None))]
    fn build(config_json: Option<&str>, weights_cache: Option<PathBuf>) -> PyResult<Self> {
        let cfg: ModelConfig = parse_json(config_json)?;
        let cache = weights_cache.or_else(weights_cache_from_env);
        build_model(&cfg, cache.as_deref())
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(weights_dir: PathBuf) -> PyResult<Self> {
        UResNet::load_weights(weights_dir)
            .map(|(inner, _)| Self { inner })
            .map_err(to_py)
    }

    fn save(&self, weights_dir: PathBuf) -> PyResult<()> {
        self.inner.save_weights(weights_dir, Default::default()).map_err(to_py)
    }

    fn enhance(&self, py: Python<'_>, img: PyRef<'_, PyImage>) -> PyResult<PyImage> {
        let input = img.inner.clone();
        py.detach(|| self.inner.enhance(&input)).map(PyImage::from).map_err(to_py)
    }

    fn config_json(&self) -> String {
        serde_json::to_string(self.inner.config()).expect("config serializes")
    }

    fn architecture_hash(&self) -> String {
        self.inner.config().architecture_hash()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.total_param_count()
    }

    #[getter]
    fn encoder_param_count(&self) -> usize {
        self.inner.encoder_param_count()
    }
}

/// Trains with a full run config (JSON) and returns the best validation
/// loss.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, config_json=None))]
fn train_model(py: Python<'_>, manifest: PathBuf, out_dir: PathBuf, config_json: Option<&str>) -> PyResult<Option<f64>> {
    let cfg = match config_json {
        None => RunConfig::default(),
        Some(t) => RunConfig::from_json(t).map_err(to_py)?,
    };
    py.detach(|| {
        let cache = cfg.weights_cache();
        let mut model = build_model(&cfg.model, cache.as_deref())?;
        cfg.write_resolved(&out_dir)?;
        let options = FitOptions {
            weights_cache: cache,
            resume: None,
        };
        train::fit(&mut model, &manifest, &cfg.train, &cfg.loss, &out_dir, options)
    })
    .map(|o| o.state.best_checkpoint_loss)
    .map_err(to_py)
}

/// Scores a model (or the unmodified inputs when `model` is None) and
/// returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, model=None))]
fn evaluate(
    py: Python<'_>,
    manifest: PathBuf,
    out_dir: PathBuf,
    model: Option<PyRef<'_, PyModel>>,
) -> PyResult<String> {
    let enhancer: &dyn Enhancer = match &model {
        Some(m) => &m.inner,
        None => &IdentityEnhancer,
    };
    let report = py.detach(|| eval::evaluate(enhancer, &manifest, &out_dir)).map_err(to_py)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[pyfunction]
#[pyo3(signature = (rows, cell_height, cell_width, labels=Vec::new()))]
fn make_grid(
    rows: Vec<Vec<PyRef<'_, PyImage>>>,
    cell_height: usize,
    cell_width: usize,
    labels: Vec<String>,
) -> PyResult<PyImage> {
    let rows: Vec<Vec<ImageTensor>> = rows
        .iter()
        .map(|r| r.iter().map(|i| i.inner.clone()).collect())
        .collect();
    eval::make_grid(&rows, &labels, (cell_height, cell_width))
        .map(PyImage::from)
        .map_err(to_py)
}

#[pymodule]
#[pyo3(name = "orbit_restore")]
pub fn orbit_restore_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_blur, m)?)?;
    m.add_function(wrap_pyfunction!(motion_blur, m)?)?;
    m.add_function(wrap_pyfunction!(adjust_exposure, m)?)?;
    m.add_function(wrap_pyfunction!(add_gaussian_noise, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(one_cycle_lr, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(make_grid, m)?)?;
    Ok(())
}
