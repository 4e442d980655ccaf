//! Python bindings. Matrices cross the boundary as lists of rows.

use std::collections::HashMap;

use nalgebra::DMatrix;
use pcs_core::covsource::{empirical_covariance, DataMatrix, LabeledData};
use pcs_core::foba::{foba_estimate_from_source, FobaConfig};
use pcs_core::hct::{fit, HctModel, OmegaMethod, DEFAULT_ALPHA0};
use pcs_core::pcs::{estimate_precision, PcsConfig};
use pcs_core::simlab::{self, GaussianSampler, ModelKind, ModelSpec, PrecisionModel};
use pcs_core::sparse::SparseSymmetricMatrix;
use pcs_core::PcsError;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: PcsError) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn data_matrix(rows: Vec<Vec<f64>>) -> PyResult<DataMatrix> {
    DataMatrix::from_rows(&rows).map_err(to_py)
}

fn square(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let p = rows.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("expected a square matrix given as a list of rows"));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// PCS estimate of the precision matrix of centered samples (one row per sample).
#[pyfunction]
#[pyo3(signature = (data, q=0.2, delta=0.1, max_steps=30, threads=0))]
fn estimate_pcs(data: Vec<Vec<f64>>, q: f64, delta: f64, max_steps: usize, threads: usize) -> PyResult<Vec<Vec<f64>>> {
    let x = data_matrix(data)?;
    let cov = empirical_covariance(&x).map_err(to_py)?;
    let est = estimate_precision(&cov, x.n(), &PcsConfig::new(q, delta, max_steps), threads).map_err(to_py)?;
    Ok(rows_of(&est.matrix.to_dense()))
}

/// Forward-backward estimate of the precision matrix of centered samples.
#[pyfunction]
#[pyo3(signature = (data, delta=0.1, max_steps=30, threads=0))]
fn estimate_foba(data: Vec<Vec<f64>>, delta: f64, max_steps: usize, threads: usize) -> PyResult<Vec<Vec<f64>>> {
    let x = data_matrix(data)?;
    let cov = empirical_covariance(&x).map_err(to_py)?;
    let est = foba_estimate_from_source(&cov, x.n(), &FobaConfig::new(delta, max_steps), threads).map_err(to_py)?;
    Ok(rows_of(&est.matrix.to_dense()))
}

fn model_kind(kind: &str, param: Option<f64>) -> PyResult<ModelKind> {
    Ok(match kind {
        "tridiagonal" => ModelKind::Tridiagonal { rho: param.unwrap_or(0.4) },
        "block3" => ModelKind::block3(),
        "wigner" => ModelKind::Wigner { epsilon: param.unwrap_or(0.01) },
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown model {kind:?}; expected tridiagonal, block3 or wigner"
            )))
        }
    })
}

/// Precision matrix of a synthetic model. `param` is rho for `tridiagonal`
/// and epsilon for `wigner`.
#[pyfunction]
#[pyo3(signature = (kind, p, seed=0, param=None))]
fn generate_precision(kind: &str, p: usize, seed: u64, param: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let model = simlab::generate_precision(&ModelSpec {
        kind: model_kind(kind, param)?,
        p,
        seed,
    })
    .map_err(to_py)?;
    Ok(rows_of(model.omega()))
}

/// `n` Gaussian samples with mean zero and precision matrix `omega`.
#[pyfunction]
#[pyo3(signature = (omega, n, seed=0))]
fn sample_gaussian(omega: Vec<Vec<f64>>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let model = PrecisionModel::new(square(&omega)?).map_err(to_py)?;
    let x = simlab::sample_gaussian(&GaussianSampler::from_model(&model), n, seed).map_err(to_py)?;
    Ok((0..x.n()).map(|i| x.sample(i).to_vec()).collect())
}

/// Spectral, Frobenius, matrix l1 and Hamming errors of `estimate` against `truth`.
#[pyfunction]
fn error_report(estimate: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<HashMap<String, f64>> {
    let a = SparseSymmetricMatrix::from_dense(&square(&estimate)?);
    let b = SparseSymmetricMatrix::from_dense(&square(&truth)?);
    let r = simlab::error_report(&a, &b).map_err(to_py)?;
    Ok(HashMap::from([
        ("spectral".to_string(), r.spectral),
        ("frobenius".to_string(), r.frobenius),
        ("l1".to_string(), r.l1),
        ("hamming".to_string(), r.hamming),
    ]))
}

/// Higher-Criticism thresholding classifier.
#[pyclass(name = "HctClassifier", module = "pcs_toolkit")]
struct PyHct {
    model: HctModel,
}

#[pymethods]
impl PyHct {
    /// Fits on samples (one row each) with labels in {-1, 1}. `method` is
    /// `naive`, `pcs` or `foba`.
    #[staticmethod]
    #[pyo3(signature = (data, labels, method="pcs", q=0.2, delta=0.1, max_steps=30, alpha0=DEFAULT_ALPHA0, threads=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        data: Vec<Vec<f64>>,
        labels: Vec<i8>,
        method: &str,
        q: f64,
        delta: f64,
        max_steps: usize,
        alpha0: f64,
        threads: usize,
    ) -> PyResult<Self> {
        let omega = match method {
            "naive" => OmegaMethod::Naive,
            "pcs" => OmegaMethod::Pcs(PcsConfig::new(q, delta, max_steps)),
            "foba" => OmegaMethod::Foba(FobaConfig::new(delta, max_steps)),
            _ => return Err(PyValueError::new_err(format!("unknown method {method:?}"))),
        };
        let labeled = LabeledData::new(data_matrix(data)?, labels).map_err(to_py)?;
        let model = fit(&labeled, &omega, alpha0, threads).map_err(to_py)?;
        Ok(Self { model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            model: HctModel::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(to_py)
    }

    fn predict(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<i8>> {
        self.model.classify_batch(&data_matrix(data)?).map_err(to_py)
    }

    fn discriminant(&self, x: Vec<f64>) -> PyResult<f64> {
        self.model.discriminant(&x).map_err(to_py)
    }

    #[getter]
    fn weights(&self) -> Vec<i8> {
        self.model.weights.clone()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.model.hc_threshold
    }

    #[getter]
    fn dim(&self) -> usize {
        self.model.dim()
    }
}

#[pymodule]
fn pcs_toolkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(estimate_pcs, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_foba, m)?)?;
    m.add_function(wrap_pyfunction!(generate_precision, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(error_report, m)?)?;
    m.add_class::<PyHct>()?;
    Ok(())
}
