//! Python bindings for the `coevo` crate.
//!
//! Configs and reports cross the boundary as plain dicts (through JSON), and
//! embeddings as lists of rows.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};
use serde::de::DeserializeOwned;
use serde::Serialize;

use coevo::autodiff::Tensor;
use coevo::eval::{analyze, evaluate_holdout, predict_attributes, EvalSettings};
use coevo::graph::{self, Binning, DynamicGraphSequence, SyntheticSpec};
use coevo::model::ModelParams;
use coevo::training::{self, Checkpoint, TrainConfig, GRADCHECK_TOLERANCE, INFERENCE_KEY};
use coevo::CoevoError;

fn to_py(e: CoevoError) -> PyErr {
    match e {
        CoevoError::Io { .. } => PyIOError::new_err(e.to_string()),
        CoevoError::Divergence { .. } | CoevoError::Sampling(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Deserializes an optional dict (or keyword arguments) into `T`.
fn from_dict<T: DeserializeOwned + Default>(py: Python<'_>, dict: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(dict) = dict else {
        return Ok(T::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (dict,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_dict<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Snapshots `(G^t, X^t)` for `t = 0..=T`.
#[pyclass(name = "Sequence", module = "coevognn", frozen)]
struct PySequence {
    inner: DynamicGraphSequence,
}

#[pymethods]
impl PySequence {
    /// Synthetic sequence; keyword arguments are the generator spec fields
    /// (`n`, `t`, `r`, `seed`, `lag_weights`, ...).
    #[staticmethod]
    #[pyo3(signature = (**spec))]
    fn synthetic(py: Python<'_>, spec: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let spec: SyntheticSpec = from_dict(py, spec)?;
        Ok(PySequence {
            inner: graph::generate_synthetic(&spec).map_err(to_py)?,
        })
    }

    /// Bins a `source,target[,weight],timestamp` CSV; without `window` the
    /// timestamps are step indices.
    #[staticmethod]
    #[pyo3(signature = (path, window=None, attributes=None))]
    fn from_edges(path: &str, window: Option<f64>, attributes: Option<&str>) -> PyResult<Self> {
        let binning = window.map_or(Binning::ExplicitSteps, Binning::Window);
        let mut seq = graph::load_edge_csv(path, binning).map_err(to_py)?;
        if let Some(a) = attributes {
            seq = graph::load_attribute_triplets(a, seq).map_err(to_py)?;
        }
        Ok(PySequence { inner: seq })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PySequence {
            inner: graph::read_sequence(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        graph::write_sequence(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn attribute_count(&self) -> usize {
        self.inner.attribute_count()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Undirected edges `(u, v)` with `u < v` of snapshot `t`.
    fn edges(&self, t: usize) -> PyResult<Vec<(usize, usize)>> {
        self.check_step(t)?;
        Ok(self.inner.graph(t).undirected_edges().collect())
    }

    /// Dense `n x r` attribute rows of snapshot `t`.
    fn attributes(&self, t: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check_step(t)?;
        Ok(rows(self.inner.dense_attributes(t)))
    }

    /// Snapshots `a..=b` as a new sequence.
    fn slice(&self, a: usize, b: usize) -> PyResult<Self> {
        Ok(PySequence {
            inner: self.inner.range(a..=b).map_err(to_py)?,
        })
    }

    /// Link recurrence, triad closure and correlation diagnostics.
    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &analyze(&self.inner).map_err(to_py)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(nodes={}, attributes={}, snapshots={})",
            self.inner.node_count(),
            self.inner.attribute_count(),
            self.inner.len()
        )
    }
}

impl PySequence {
    fn check_step(&self, t: usize) -> PyResult<()> {
        if t < self.inner.len() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "snapshot {t} out of range for {} snapshots",
                self.inner.len()
            )))
        }
    }
}

/// Trained parameters with their training config.
#[pyclass(name = "Model", module = "coevognn", frozen)]
struct PyModel {
    checkpoint: Checkpoint,
    losses: Vec<(f64, f64, f64)>,
}

#[pymethods]
impl PyModel {
    /// Trains on every snapshot of `seq`; keyword arguments are training
    /// config fields (`span`, `dim`, `epochs`, `fusion`, ...).
    #[staticmethod]
    #[pyo3(signature = (seq, **config))]
    fn train(py: Python<'_>, seq: &PySequence, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg: TrainConfig = from_dict(py, config)?;
        cfg.validate().map_err(to_py)?;
        let inner = &seq.inner;
        let outcome = py.detach(|| training::train(inner, &cfg)).map_err(to_py)?;
        let losses = outcome
            .report
            .epochs
            .iter()
            .map(|e| (e.total, e.attribute, e.structure))
            .collect();
        Ok(PyModel {
            checkpoint: Checkpoint {
                config: cfg,
                params: outcome.params,
                steps: outcome.steps,
            },
            losses,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            checkpoint: training::load_checkpoint(std::path::Path::new(path)).map_err(to_py)?,
            losses: Vec::new(),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        training::save_checkpoint(&self.checkpoint, std::path::Path::new(path)).map_err(to_py)
    }

    /// Training config as a dict.
    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.checkpoint.config)
    }

    /// `(total, attribute, structure)` per epoch; empty for loaded models.
    #[getter]
    fn losses(&self) -> Vec<(f64, f64, f64)> {
        self.losses.clone()
    }

    /// `H^{T+1}` rows for all nodes from the snapshots of `seq`.
    fn infer_future(&self, py: Python<'_>, seq: &PySequence) -> PyResult<Vec<Vec<f64>>> {
        let (h, _) = self.future(py, &seq.inner)?;
        Ok(rows(&h))
    }

    /// Decoded attributes of `H^{T+1}`.
    fn predict_attributes(&self, py: Python<'_>, seq: &PySequence) -> PyResult<Vec<Vec<f64>>> {
        let (h, params) = self.future(py, &seq.inner)?;
        Ok(rows(&predict_attributes(params, &h).map_err(to_py)?))
    }

    /// Per node-time attention weights `(node, t, weights)` of the cascade over `seq`.
    fn attention(&self, py: Python<'_>, seq: &PySequence) -> PyResult<Vec<(usize, usize, Vec<f64>)>> {
        let params = &self.checkpoint.params;
        let key = [self.checkpoint.config.seed, INFERENCE_KEY];
        let inner = &seq.inner;
        let (_, emb) = py.detach(|| params.infer_future(inner, &key, false)).map_err(to_py)?;
        Ok(emb.trace.entries.into_iter().map(|e| (e.node, e.t, e.weights)).collect())
    }

    /// Forecasts the final snapshot of `seq` from the rest and scores it.
    /// Keyword arguments override evaluation settings.
    #[pyo3(signature = (seq, **settings))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        seq: &PySequence,
        settings: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let settings: EvalSettings = from_dict(py, settings)?;
        let params = &self.checkpoint.params;
        let seed = self.checkpoint.config.seed;
        let inner = &seq.inner;
        let report = py
            .detach(|| evaluate_holdout(params, inner, &settings, seed))
            .map_err(to_py)?;
        to_dict(py, &report)
    }

    fn __repr__(&self) -> String {
        let c = &self.checkpoint.config;
        format!(
            "Model(span={}, depth={}, dim={}, fusion={:?}, steps={})",
            c.span, c.depth, c.dim, c.fusion, self.checkpoint.steps
        )
    }
}

impl PyModel {
    fn future(&self, py: Python<'_>, seq: &DynamicGraphSequence) -> PyResult<(Tensor, &ModelParams)> {
        let params = &self.checkpoint.params;
        let key = [self.checkpoint.config.seed, INFERENCE_KEY];
        let (h, _) = py.detach(|| params.infer_future(seq, &key, false)).map_err(to_py)?;
        Ok((h, params))
    }
}

/// Finite-difference gradient check; returns `{tensor: max relative error}`.
#[pyfunction]
#[pyo3(signature = (**config))]
fn gradcheck<'py>(py: Python<'py>, config: Option<&Bound<'_, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let cfg: TrainConfig = from_dict(py, config)?;
    let report = training::gradient_check(&cfg, None).map_err(to_py)?;
    let out = PyDict::new(py);
    for t in &report.tensors {
        out.set_item(&t.name, t.max_rel_err)?;
    }
    Ok(out)
}

#[pymodule]
fn coevognn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("GRADCHECK_TOLERANCE", GRADCHECK_TOLERANCE)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
