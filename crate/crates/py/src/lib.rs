//! Python bindings: images cross the boundary as flat `float` lists in `C, H, W` order.

use std::collections::BTreeMap;

use mrestore::blocks::{Model as CoreModel, ModelConfig};
use mrestore::{analysis, checkpoint, data, DType, Tensor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: mrestore::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn image(values: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<Tensor> {
    let (c, h, w) = shape;
    Tensor::from_f64([1, c, h, w], &values, DType::F64).map_err(py_err)
}

fn preset(name: &str) -> PyResult<ModelConfig> {
    match name {
        "full" => Ok(ModelConfig::full()),
        "tiny" => Ok(ModelConfig::tiny()),
        other => Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    }
}

/// A restoration network with its parameters.
#[pyclass(module = "mrestore_py")]
struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    /// Freshly initialised network (identity mapping before training).
    #[new]
    #[pyo3(signature = (preset_name = "tiny", seed = 0))]
    fn new(preset_name: &str, seed: u64) -> PyResult<Self> {
        let inner = CoreModel::new(&preset(preset_name)?, DType::F32, seed).map_err(py_err)?;
        Ok(Model { inner })
    }

    /// Load the network stored in a training checkpoint.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = checkpoint::load(path).map_err(py_err)?;
        Ok(Model { inner })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn in_channels(&self) -> usize {
        self.inner.config().in_channels
    }

    /// Restore one image of any size; returns values clipped to `[0, 1]`.
    fn restore(&self, py: Python<'_>, values: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<Vec<f64>> {
        let x = image(values, shape)?;
        let y = py.detach(|| self.inner.restore(&x)).map_err(py_err)?;
        Ok(y.to_f64_vec())
    }
}

/// Parameter count and per-image cost of a preset at the given resolution.
#[pyfunction]
#[pyo3(signature = (preset_name = "full", height = 256, width = 256))]
fn analyze(preset_name: &str, height: usize, width: usize) -> PyResult<BTreeMap<String, u64>> {
    let r = analysis::count_costs(&preset(preset_name)?, height, width).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("params".to_string(), r.params),
        ("macs".to_string(), r.macs),
        ("flops".to_string(), r.flops),
        ("flops_2mac".to_string(), r.flops_2mac()),
        ("conv_count".to_string(), r.conv_count),
        ("activations".to_string(), r.activation_count),
    ]))
}

#[pyfunction]
#[pyo3(signature = (a, b, shape, peak = 1.0))]
fn psnr(a: Vec<f64>, b: Vec<f64>, shape: (usize, usize, usize), peak: f64) -> PyResult<f64> {
    analysis::psnr(&image(a, shape)?, &image(b, shape)?, peak).map_err(py_err)
}

#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    analysis::ssim(&image(a, shape)?, &image(b, shape)?).map_err(py_err)
}

/// Procedural RGB test scene in `[0, 1]`.
#[pyfunction]
fn synthetic_scene(height: usize, width: usize, seed: u64) -> Vec<f64> {
    data::synthetic_scene(height, width, seed).to_f64_vec()
}

/// Additive Gaussian noise with `sigma` on the 0-255 scale.
#[pyfunction]
fn add_noise(values: Vec<f64>, shape: (usize, usize, usize), sigma: f64, seed: u64) -> PyResult<Vec<f64>> {
    let noisy = data::add_gaussian_noise(&image(values, shape)?, sigma, seed).map_err(py_err)?;
    Ok(noisy.to_f64_vec())
}

#[pymodule]
fn mrestore_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_scene, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    Ok(())
}
