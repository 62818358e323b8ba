//! Python bindings for `tmx-core`. Matrices cross the boundary as lists of
//! rows.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use tmx_core::datagen::{self, DatasetConfig, ShiftMode};
use tmx_core::decimation::{self, Criterion, DecimationConfig, DecimationTrajectory};
use tmx_core::experiment::{self, ExperimentConfig};
use tmx_core::{metrics, pseudolikelihood, FVariant};

fn py_err(e: tmx_core::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_rows(a: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

/// Ground-truth channel.
#[pyclass(name = "Transmission", frozen)]
struct PyTransmission(tmx_core::TransmissionSpec);

#[pymethods]
impl PyTransmission {
    #[getter]
    fn w(&self) -> usize {
        self.0.w
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    #[getter]
    fn t(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.t.view())
    }

    fn __repr__(&self) -> String {
        format!("Transmission(w={}, s={}, nnz={})", self.0.w, self.0.s, self.0.nnz())
    }
}

/// Intensity samples, one row per measurement: inputs first, then outputs.
#[pyclass(name = "SampleSet", frozen)]
struct PySampleSet(tmx_core::SampleSet);

#[pymethods]
impl PySampleSet {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        tmx_core::SampleSet::new(from_rows(&rows)?).map(Self).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn shifted(&self) -> bool {
        self.0.is_shifted()
    }

    #[getter]
    fn data(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.data())
    }

    /// Subtracts the empirical channel means.
    fn shift(&self) -> PyResult<Self> {
        datagen::shift_dataset(&self.0, ShiftMode::EmpiricalMean)
            .map(Self)
            .map_err(py_err)
    }

    /// Outputs become inputs and vice versa.
    fn swap_halves(&self) -> Self {
        Self(self.0.swap_halves())
    }

    fn __repr__(&self) -> String {
        format!("SampleSet(len={}, n={}, shifted={})", self.0.len(), self.0.n(), self.0.is_shifted())
    }
}

#[pyclass(name = "CouplingMatrix", frozen)]
struct PyCouplingMatrix(tmx_core::CouplingMatrix);

#[pymethods]
impl PyCouplingMatrix {
    #[getter]
    fn entries(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.entries())
    }

    #[getter]
    fn t_active(&self) -> usize {
        self.0.t_active()
    }

    /// The transmission estimate read off the cross block.
    fn transmission(&self) -> PyResult<Vec<Vec<f64>>> {
        metrics::extract_t(&self.0).map(|t| to_rows(t.view())).map_err(py_err)
    }

    /// Estimated temperature `theta = 2 sigma^2`.
    fn theta(&self) -> PyResult<f64> {
        metrics::extract_noise(&self.0).map(|n| n.theta).map_err(py_err)
    }

    /// Log-pseudolikelihood of `samples` under this model.
    #[pyo3(signature = (samples, variant = "infinf"))]
    fn pseudolikelihood(&self, samples: &PySampleSet, variant: &str) -> PyResult<f64> {
        let v: FVariant = parse(variant)?;
        pseudolikelihood::eval_total_l(&self.0, &samples.0, v).map_err(py_err)
    }

    /// Gradient over the active independent entries, upper triangle row-major.
    #[pyo3(signature = (samples, variant = "infinf"))]
    fn gradient(&self, samples: &PySampleSet, variant: &str) -> PyResult<Vec<f64>> {
        let v: FVariant = parse(variant)?;
        pseudolikelihood::grad_l(&self.0, &samples.0, v).map_err(py_err)
    }
}

/// The nested models produced by decimation, with their scores.
#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory(DecimationTrajectory);

#[pymethods]
impl PyTrajectory {
    fn __len__(&self) -> usize {
        self.0.records.len()
    }

    #[getter]
    fn l_max(&self) -> f64 {
        self.0.l_max
    }

    #[getter]
    fn l_min(&self) -> f64 {
        self.0.l_min
    }

    /// `(step, T-active, L, TIC, AIC, AICc, BIC)` per step.
    fn records(&self) -> Vec<(usize, usize, f64, f64, f64, f64, f64)> {
        self.0
            .records
            .iter()
            .map(|r| (r.step, r.t_active, r.l_value, r.tic, r.aic, r.aicc, r.bic))
            .collect()
    }

    /// Step chosen by a criterion: "TIC", "AIC", "AICc" or "BIC".
    fn selected_step(&self, criterion: &str) -> PyResult<usize> {
        let c: Criterion = parse(criterion)?;
        Ok(self.0.selected_step(c))
    }

    fn model(&self, step: usize) -> PyResult<PyCouplingMatrix> {
        self.0
            .models
            .get(step)
            .map(|m| PyCouplingMatrix(m.clone()))
            .ok_or_else(|| PyValueError::new_err(format!("no step {step}")))
    }

    fn selected_model(&self, criterion: &str) -> PyResult<PyCouplingMatrix> {
        let c: Criterion = parse(criterion)?;
        Ok(PyCouplingMatrix(self.0.selected_model(c).clone()))
    }
}

/// Draws a random channel and `m` training samples from it.
#[pyfunction]
#[pyo3(signature = (w = 4, s = 0.2, m = 10_000, sigma = 0.0, seed = 0, clip = true))]
fn generate(w: usize, s: f64, m: usize, sigma: f64, seed: u64, clip: bool) -> PyResult<(PyTransmission, PySampleSet)> {
    let cfg = DatasetConfig {
        w,
        s,
        m_samples: m,
        sigma_noise: sigma,
        seed,
        clip,
        ..Default::default()
    };
    let (spec, ds) = datagen::generate(&cfg).map_err(py_err)?;
    Ok((PyTransmission(spec), PySampleSet(ds)))
}

/// Runs pseudolikelihood decimation; `inverse` swaps inputs and outputs first.
#[pyfunction]
#[pyo3(signature = (samples, variant = "infinf", fraction = decimation::DEFAULT_FRACTION, inverse = false))]
fn decimate(py: Python<'_>, samples: &PySampleSet, variant: &str, fraction: f64, inverse: bool) -> PyResult<PyTrajectory> {
    let cfg = DecimationConfig {
        variant: parse(variant)?,
        fraction,
        ..Default::default()
    };
    let ds = &samples.0;
    let traj = py.detach(|| {
        if inverse {
            decimation::infer_inverse(ds, &cfg)
        } else {
            decimation::run_decimation(ds, &cfg)
        }
    });
    traj.map(PyTrajectory).map_err(py_err)
}

/// Relative reconstruction error of an inferred transmission matrix.
#[pyfunction]
fn q_error(t_true: Vec<Vec<f64>>, t_inf: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::q_error(from_rows(&t_true)?.view(), from_rows(&t_inf)?.view()).map_err(py_err)
}

/// `(mean diagonal, mean |off-diagonal|)` of the product `a b`.
#[pyfunction]
fn pseudo_unity(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let pu = metrics::pseudo_unity(from_rows(&a)?.view(), from_rows(&b)?.view()).map_err(py_err)?;
    Ok((pu.mean_diagonal, pu.mean_abs_off_diagonal))
}

/// Measurements per free parameter; `s = None` means complete connectivity.
#[pyfunction]
#[pyo3(signature = (w, m, s = None))]
fn sampling_ratio(w: usize, m: usize, s: Option<f64>) -> f64 {
    let c = match s {
        Some(s) => datagen::Connectivity::Sparse(s),
        None => datagen::Connectivity::Complete,
    };
    datagen::sampling_ratio(w, m, c)
}

/// Generate, infer, validate and report over a noise grid. Returns the
/// output directory.
#[pyfunction]
#[pyo3(signature = (out, config = None))]
fn sweep(py: Python<'_>, out: PathBuf, config: Option<PathBuf>) -> PyResult<PathBuf> {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(&p).map_err(py_err)?,
        None => ExperimentConfig::default(),
    };
    py.detach(|| experiment::cmd_sweep(&cfg, &out)).map_err(py_err)?;
    Ok(out)
}

#[pymodule]
fn pytmx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransmission>()?;
    m.add_class::<PySampleSet>()?;
    m.add_class::<PyCouplingMatrix>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(decimate, m)?)?;
    m.add_function(wrap_pyfunction!(q_error, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_unity, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
