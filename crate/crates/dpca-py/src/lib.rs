//! Python bindings: decomposable graphs, block-sparse concentration fitting,
//! the clique-distributed eigensolver, tracking, and residual scoring.
//!
//! Data crosses the boundary as plain nested lists (row-major samples), so no
//! numpy ABI coupling; convert on the Python side as needed.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dpca_core::{
    anomaly, bisect_min_eig, build_graph, derive_sets, eigensolver, fit_concentration, synth,
    upper_bound, BlockSparseConcentration, Bracket, DecomposableGraph, MessageLog, SampleSet,
};

fn to_py_err(e: dpca_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(PyValueError::new_err("data must contain at least one row"));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("data rows have inconsistent lengths"));
    }
    Ok(DMatrix::from_fn(n, p, |r, c| rows[r][c]))
}

fn sample_set(rows: &[Vec<f64>]) -> PyResult<SampleSet> {
    SampleSet::new(matrix_from_rows(rows)?).map_err(to_py_err)
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

/// A decomposable graph given as cliques in perfect elimination order.
#[pyclass(name = "Graph", skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: DecomposableGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(p: usize, cliques: Vec<Vec<usize>>) -> PyResult<Self> {
        Ok(Self {
            inner: build_graph(p, &cliques).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn num_cliques(&self) -> usize {
        self.inner.num_cliques()
    }

    fn cliques(&self) -> Vec<Vec<usize>> {
        (0..self.inner.num_cliques())
            .map(|k| self.inner.clique(k).to_vec())
            .collect()
    }

    fn separators(&self) -> Vec<Vec<usize>> {
        derive_sets(&self.inner).separator.clone()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text)
                .map_err(|e| PyValueError::new_err(e.to_string()))?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(p={}, cliques={})",
            self.inner.p(),
            self.inner.num_cliques()
        )
    }
}

/// A fitted block-sparse concentration matrix.
#[pyclass(name = "Concentration")]
struct PyConcentration {
    inner: BlockSparseConcentration,
}

#[pymethods]
impl PyConcentration {
    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    fn dense(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.dense())
    }

    fn upper_bound(&self) -> f64 {
        upper_bound(&self.inner)
    }

    /// Minimal eigenvalue by distributed bisection.
    /// Returns (lambda, bracket_width, iterations, message_count).
    fn min_eig(&self, eps: f64) -> PyResult<(f64, f64, usize, usize)> {
        let bracket = Bracket::new(0.0, upper_bound(&self.inner), eps).map_err(to_py_err)?;
        let mut log = MessageLog::new();
        let bis = bisect_min_eig(&self.inner, bracket, None, &mut log).map_err(to_py_err)?;
        Ok((bis.midpoint(), bis.width(), bis.iterations, log.len()))
    }

    /// Eigenvector at a given eigenvalue, recovered clique by clique.
    fn eigvec(&self, lambda: f64) -> PyResult<Vec<f64>> {
        let mut log = MessageLog::new();
        let u = eigensolver::eigvec(&self.inner, lambda, None, &mut log).map_err(to_py_err)?;
        Ok(u.iter().copied().collect())
    }

    /// The `j` smallest eigenpairs as (lambda, vector) tuples.
    fn spectrum(&self, j: usize, eps: f64) -> PyResult<Vec<(f64, Vec<f64>)>> {
        let mut log = MessageLog::new();
        let pairs = eigensolver::spectrum(&self.inner, j, eps, &mut log).map_err(to_py_err)?;
        Ok(pairs
            .into_iter()
            .map(|p| (p.lambda, p.vector.iter().copied().collect()))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Concentration(p={})", self.inner.p())
    }
}

/// ML fit of the concentration matrix from samples (rows) over a graph.
#[pyfunction]
fn fit(data: Vec<Vec<f64>>, graph: &PyGraph) -> PyResult<PyConcentration> {
    let set = sample_set(&data)?;
    Ok(PyConcentration {
        inner: fit_concentration(&set, &graph.inner).map_err(to_py_err)?,
    })
}

/// Residual norm of each sample against the j-dimensional principal subspace.
#[pyfunction]
fn residual_norms(data: Vec<Vec<f64>>, graph: &PyGraph, j: usize) -> PyResult<Vec<f64>> {
    let set = sample_set(&data)?;
    let model = anomaly::fit_model(&set, &graph.inner, j).map_err(to_py_err)?;
    Ok(anomaly::residual_norms(&model, &set).map_err(to_py_err)?.norms)
}

/// Indices whose residual norm exceeds the empirical quantile.
#[pyfunction]
fn detect_anomalies(norms: Vec<f64>, quantile: f64) -> PyResult<Vec<usize>> {
    anomaly::detect(&anomaly::ResidualSeries { norms }, anomaly::DetectRule::Quantile(quantile))
        .map_err(to_py_err)
}

/// Sliding-window minimal-eigenvalue trace.
/// Returns (window_start, lambda, bracket_width, iterations, message_bytes)
/// per window.
#[pyfunction]
fn track(
    data: Vec<Vec<f64>>,
    graph: &PyGraph,
    window: usize,
    overlap: usize,
    eps: f64,
    warm_margin: f64,
) -> PyResult<Vec<(usize, f64, f64, usize, usize)>> {
    let set = sample_set(&data)?;
    let trace =
        anomaly::track(&set, &graph.inner, window, overlap, eps, warm_margin).map_err(to_py_err)?;
    Ok(trace
        .windows
        .iter()
        .map(|w| (w.start, w.lambda, w.bracket_width, w.iterations, w.message_bytes))
        .collect())
}

/// Deterministic standard-normal sample matrix (rows are samples).
#[pyfunction]
fn standard_normal(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = synth::rng(seed);
    matrix_to_rows(&synth::standard_normal_matrix(n, p, &mut rng))
}

/// The three-clique tracking preset graph (p=305, 5 shared nodes per edge).
#[pyfunction]
fn tracking_graph() -> PyGraph {
    PyGraph {
        inner: synth::tracking_graph(),
    }
}

#[pymodule]
fn dpca_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyConcentration>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(residual_norms, m)?)?;
    m.add_function(wrap_pyfunction!(detect_anomalies, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(standard_normal, m)?)?;
    m.add_function(wrap_pyfunction!(tracking_graph, m)?)?;
    Ok(())
}
