//! Python bindings. Matrices cross the boundary as row-major nested lists
//! with one column per signal; `nan` marks an unobserved entry.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use sgkl_core::experiments::{self, ExperimentConfig};
use sgkl_core::{io, GraphDataset, KernelParamVector, SgklError};

fn to_py(e: SgklError) -> PyErr {
    match e {
        SgklError::NumericalBlowUp { .. } | SgklError::IllConditioned { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        SgklError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_config(config: Option<&str>) -> PyResult<ExperimentConfig> {
    let cfg: ExperimentConfig = match config {
        Some(s) => {
            serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("config: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.sgkl.validate().map_err(to_py)?;
    cfg.synthetic.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Kernel centers and scales.
#[pyclass(name = "KernelParams", module = "sgkl", from_py_object)]
#[derive(Clone)]
struct PyKernelParams(KernelParamVector);

#[pymethods]
impl PyKernelParams {
    #[new]
    fn new(mu: Vec<f64>, s: Vec<f64>) -> PyResult<Self> {
        KernelParamVector::new(mu, s).map(Self).map_err(to_py)
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.0.mu.clone()
    }

    #[getter]
    fn s(&self) -> Vec<f64> {
        self.0.s.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let psi: KernelParamVector =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        psi.validate().map_err(to_py)?;
        Ok(Self(psi))
    }

    /// Atoms `[D_1 ... D_J]` on the graph with the given weight matrix.
    fn dictionary(&self, weights: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let g = sgkl_core::Graph::new(matrix(weights)?).map_err(to_py)?;
        let l = sgkl_core::graph::normalized_laplacian(&g).map_err(to_py)?;
        let dec = std::sync::Arc::new(sgkl_core::graph::eigendecompose(&l).map_err(to_py)?);
        let d = sgkl_core::build_dictionary(&dec, &self.0).map_err(to_py)?;
        Ok(rows(d.atoms()))
    }

    fn __repr__(&self) -> String {
        format!("KernelParams(mu={:?}, s={:?})", self.0.mu, self.0.s)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

/// A graph with partially observed signals.
#[pyclass(name = "Dataset", module = "sgkl", from_py_object)]
#[derive(Clone)]
struct PyDataset(GraphDataset);

#[pymethods]
impl PyDataset {
    #[new]
    fn new(weights: Vec<Vec<f64>>, signals: Vec<Vec<f64>>) -> PyResult<Self> {
        let graph = sgkl_core::Graph::new(matrix(weights)?).map_err(to_py)?;
        let signals =
            sgkl_core::ObservedSignalSet::from_nan_encoded(matrix(signals)?).map_err(to_py)?;
        if signals.node_count() != graph.node_count() {
            return Err(PyValueError::new_err(format!(
                "signals have {} rows, graph has {} nodes",
                signals.node_count(),
                graph.node_count()
            )));
        }
        Ok(Self(GraphDataset { graph, signals }))
    }

    #[staticmethod]
    fn load(graph_path: PathBuf, signals_path: PathBuf) -> PyResult<Self> {
        io::load_dataset(&graph_path, &signals_path)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.graph.node_count()
    }

    #[getter]
    fn signal_count(&self) -> usize {
        self.0.signals.signal_count()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        rows(self.0.graph.weights())
    }

    fn signals(&self) -> Vec<Vec<f64>> {
        rows(&self.0.signals.to_nan_encoded())
    }

    fn masks(&self) -> Vec<Vec<bool>> {
        self.0.signals.masks().to_vec()
    }

    /// Observed entries kept, missing ones replaced by the signal's observed mean.
    fn mean_fill(&self) -> Vec<Vec<f64>> {
        rows(&experiments::mean_fill(&self.0.signals))
    }
}

/// One generated graph: the observed data and its ground truth.
#[pyclass(name = "SyntheticGraph", module = "sgkl", get_all)]
struct PySyntheticGraph {
    dataset: PyDataset,
    clean: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
    psi: PyKernelParams,
    sigma: f64,
}

/// A fitted model.
#[pyclass(name = "Model", module = "sgkl")]
struct PyModel {
    model: sgkl_core::SgklModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn psi(&self) -> PyKernelParams {
        PyKernelParams(self.model.psi.clone())
    }

    #[getter]
    fn num_graphs(&self) -> usize {
        self.model.num_graphs()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.model.diagnostics.converged
    }

    /// Objective after every coefficient and kernel phase.
    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.model.trace.iter().map(|t| t.objective).collect()
    }

    fn objective(&self) -> PyResult<f64> {
        self.model.total_objective().map_err(to_py)
    }

    fn coefficients(&self, m: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.model.graph(m).map_err(to_py)?.coefficients))
    }

    fn reconstruct(&self, m: usize) -> PyResult<Vec<Vec<f64>>> {
        self.model.reconstruct(m).map(|r| rows(&r)).map_err(to_py)
    }

    /// Codes unseen signals on graph `m` with the model frozen; returns
    /// `(reconstruction, coefficients)`.
    fn infer(&self, m: usize, signals: Vec<Vec<f64>>) -> PyResult<(Rows, Rows)> {
        let test =
            sgkl_core::ObservedSignalSet::from_nan_encoded(matrix(signals)?).map_err(to_py)?;
        let res = sgkl_core::infer_inductive(&self.model, m, &test).map_err(to_py)?;
        Ok((rows(&res.reconstruction), rows(&res.coefficients)))
    }

    /// Writes `path` and one coefficient CSV per graph next to it.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_checkpoint(&self.model.checkpoint(), &path).map_err(to_py)
    }

    /// Rebuilds a saved model on the data it was fitted to.
    #[staticmethod]
    fn load(path: PathBuf, datasets: Vec<PyDataset>) -> PyResult<Self> {
        let ck = io::load_checkpoint(&path).map_err(to_py)?;
        let data: Vec<GraphDataset> = datasets.into_iter().map(|d| d.0).collect();
        let model = sgkl_core::restore(&data, &ck).map_err(to_py)?;
        Ok(Self { model })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(graphs={}, psi={:?})",
            self.model.num_graphs(),
            self.model.psi.to_flat()
        )
    }
}

/// The default configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&ExperimentConfig::default()).expect("config serializes")
}

/// Generates the synthetic graphs described by the `synthetic` section of
/// the JSON `config`.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn generate(config: Option<&str>, seed: Option<u64>) -> PyResult<Vec<PySyntheticGraph>> {
    let mut cfg = parse_config(config)?;
    if let Some(seed) = seed {
        cfg.synthetic.seed = seed;
    }
    let data = experiments::generate_synthetic(&cfg.synthetic).map_err(to_py)?;
    Ok(data
        .graphs
        .iter()
        .map(|g| PySyntheticGraph {
            dataset: PyDataset(g.dataset()),
            clean: rows(&g.clean),
            coefficients: rows(&g.coefficients),
            psi: PyKernelParams(g.psi.clone()),
            sigma: g.sigma,
        })
        .collect())
}

/// Learns a shared kernel dictionary from all datasets jointly.
#[pyfunction]
#[pyo3(signature = (datasets, config=None, seed=None))]
fn fit(
    py: Python<'_>,
    datasets: Vec<PyDataset>,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<PyModel> {
    let mut cfg = parse_config(config)?.sgkl;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data: Vec<GraphDataset> = datasets.into_iter().map(|d| d.0).collect();
    let model = py.detach(|| sgkl_core::fit(&data, &cfg)).map_err(to_py)?;
    Ok(PyModel { model })
}

/// Normalized squared error over the entries where `masks` is false.
#[pyfunction]
fn nmse(truth: Vec<Vec<f64>>, estimate: Vec<Vec<f64>>, masks: Vec<Vec<bool>>) -> PyResult<f64> {
    experiments::nmse(&matrix(truth)?, &matrix(estimate)?, &masks).map_err(to_py)
}

#[pymodule]
fn sgkl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernelParams>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySyntheticGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    Ok(())
}
