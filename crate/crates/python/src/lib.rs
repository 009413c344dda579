//! Python module `cngan`: datasets, training, checkpoints and metrics.

use std::collections::BTreeSet;
use std::sync::Arc;

use cngan::data::{load_dataset, save_dataset, write_dataset, Dataset};
use cngan::eval::{self, Aggregate};
use cngan::train::{load_checkpoint, save_checkpoint, Checkpoint, Cursor, Trainer};
use cngan_cli::RunConfig;
use pyo3::exceptions::{PyArithmeticError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyTuple};

fn to_py(e: cngan::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn value_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_instance_of::<PyBool>() {
        return Ok(if v.extract::<bool>()? { "true" } else { "false" }.into());
    }
    if v.is_instance_of::<PyList>() || v.is_instance_of::<PyTuple>() {
        let parts: Vec<String> = v.try_iter()?.map(|x| Ok(x?.str()?.to_string())).collect::<PyResult<_>>()?;
        return Ok(parts.join(","));
    }
    Ok(v.str()?.to_string())
}

/// Configuration from keyword arguments, using the same keys as the CLI.
fn run_config(seed: u64, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.set("seed", &seed.to_string()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            cfg.set(&key, &value_text(&v)?)
                .map_err(|e| PyValueError::new_err(format!("{e:#}")))?;
        }
    }
    Ok(cfg)
}

#[pyclass(name = "Dataset", module = "cngan", frozen)]
struct PyDataset {
    inner: Arc<Dataset>,
}

impl PyDataset {
    fn user(&self, position: usize) -> PyResult<&cngan::data::UserTimeline> {
        self.inner
            .users
            .get(position)
            .ok_or_else(|| PyIndexError::new_err(format!("user position {position} out of range")))
    }

    fn interval(&self, t: usize) -> PyResult<usize> {
        if t >= self.inner.num_intervals {
            return Err(PyIndexError::new_err(format!("interval {t} out of range")));
        }
        Ok(t)
    }
}

#[pymethods]
impl PyDataset {
    /// Synthetic two-network dataset; keyword arguments override generator settings.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, **config))]
    fn synthesize(seed: u64, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = run_config(seed, config)?;
        let ds = cngan::data::synthesize_dataset(&cfg.synth, cfg.seed).map_err(to_py)?.dataset;
        Ok(PyDataset { inner: Arc::new(ds) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: Arc::new(load_dataset(path).map_err(to_py)?),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_dataset(&self.inner, path).map_err(to_py)
    }

    /// sha256 of the serialized dataset.
    fn fingerprint(&self) -> PyResult<String> {
        let mut bytes = Vec::new();
        write_dataset(&self.inner, &mut bytes).map_err(to_py)?;
        Ok(cngan_cli::fingerprint(&bytes))
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items
    }

    #[getter]
    fn num_topics(&self) -> usize {
        self.inner.num_topics
    }

    #[getter]
    fn num_intervals(&self) -> usize {
        self.inner.num_intervals
    }

    /// Positions of users with source-network data.
    fn overlapped(&self) -> Vec<usize> {
        self.inner.partition_overlap().0
    }

    fn interactions(&self, position: usize, t: usize) -> PyResult<Vec<u32>> {
        let t = self.interval(t)?;
        Ok(self.user(position)?.interactions[t].clone())
    }

    fn target(&self, position: usize, t: usize) -> PyResult<Vec<f64>> {
        let t = self.interval(t)?;
        Ok(self.user(position)?.target[t].values().to_vec())
    }

    /// Source distribution, or `None` for non-overlapped users.
    fn source(&self, position: usize, t: usize) -> PyResult<Option<Vec<f64>>> {
        let t = self.interval(t)?;
        Ok(self.user(position)?.source_at(t).map(|d| d.values().to_vec()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(users={}, items={}, topics={}, intervals={})",
            self.inner.num_users(),
            self.inner.num_items,
            self.inner.num_topics,
            self.inner.num_intervals
        )
    }
}

fn aggregate_dict<'py>(py: Python<'py>, a: &Aggregate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("variant", &a.variant)?;
    d.set_item("n", a.n)?;
    d.set_item("rows", a.rows)?;
    d.set_item("hr", a.hr)?;
    d.set_item("ndcg", a.ndcg)?;
    d.set_item("novelty", a.novelty)?;
    d.set_item("diversity", a.diversity)?;
    Ok(d)
}

/// Training state. The model lives in a checkpoint between calls, so a
/// `Trainer` can be saved and resumed at any step.
#[pyclass(name = "Trainer", module = "cngan")]
struct PyTrainer {
    dataset: Arc<Dataset>,
    state: Checkpoint,
}

impl PyTrainer {
    fn drive(&mut self, f: impl FnOnce(&mut Trainer<'_>) -> cngan::Result<bool>) -> PyResult<bool> {
        let mut t = Trainer::resume(&self.dataset, self.state.clone()).map_err(to_py)?;
        let out = f(&mut t);
        self.state = t.checkpoint();
        out.map_err(to_py)
    }
}

#[pymethods]
impl PyTrainer {
    /// `variant` is one of proposed, crgan, nubpr_o, nubpr_no; other keyword
    /// arguments use the CLI configuration keys (e.g. `offline_epochs=5`).
    #[new]
    #[pyo3(signature = (dataset, variant = "proposed", seed = 0, **config))]
    fn new(dataset: &PyDataset, variant: &str, seed: u64, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = run_config(seed, config)?;
        cfg.set("variant", variant).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let data = Arc::clone(&dataset.inner);
        let state = Trainer::new(&data, cfg.train).map_err(to_py)?.checkpoint();
        Ok(PyTrainer { dataset: data, state })
    }

    #[staticmethod]
    fn resume(dataset: &PyDataset, path: &str) -> PyResult<Self> {
        let state = load_checkpoint(std::path::Path::new(path)).map_err(to_py)?;
        let data = Arc::clone(&dataset.inner);
        Trainer::resume(&data, state.clone()).map_err(to_py)?;
        Ok(PyTrainer { dataset: data, state })
    }

    /// One offline epoch or online interval; `False` once finished.
    fn step(&mut self) -> PyResult<bool> {
        self.drive(|t| t.step())
    }

    fn offline_train(&mut self) -> PyResult<()> {
        self.drive(|t| t.offline_train().map(|_| true)).map(|_| ())
    }

    fn run(&mut self) -> PyResult<()> {
        self.drive(|t| t.run().map(|_| true)).map(|_| ())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.state, std::path::Path::new(path)).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.state.config.variant.name()
    }

    /// `"offline"`, `"online"` or `"done"`.
    #[getter]
    fn phase(&self) -> &'static str {
        match self.state.cursor {
            Cursor::Offline { .. } => "offline",
            Cursor::Online { .. } => "online",
            Cursor::Done => "done",
        }
    }

    fn offline_trace<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.state
            .offline_trace
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("epoch", e.epoch)?;
                d.set_item("d_loss", e.d_loss)?;
                d.set_item("g_loss", e.g_loss)?;
                d.set_item("content_loss", e.content_loss)?;
                d.set_item("mapping_l1", e.mapping_l1)?;
                d.set_item("r_loss", e.r_loss)?;
                Ok(d)
            })
            .collect()
    }

    fn online_trace<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.state
            .online_trace
            .iter()
            .map(|o| {
                let d = PyDict::new(py);
                d.set_item("interval", o.interval)?;
                d.set_item("iteration", o.iteration)?;
                d.set_item("r_loss", o.r_loss)?;
                d.set_item("d_loss", o.d_loss)?;
                d.set_item("g_loss", o.g_loss)?;
                d.set_item("content_loss", o.content_loss)?;
                d.set_item("mapping_l1", o.mapping_l1)?;
                Ok(d)
            })
            .collect()
    }

    /// Per-(variant, N) means of the online evaluation so far.
    fn aggregates<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.state.report.aggregates().iter().map(|a| aggregate_dict(py, a)).collect()
    }

    fn report_csv(&self) -> String {
        self.state.report.to_csv_string()
    }

    fn __repr__(&self) -> String {
        format!("Trainer(variant={}, phase={})", self.variant(), self.phase())
    }
}

#[pyfunction]
fn hit_ratio(topn: Vec<u32>, truth: Vec<u32>) -> PyResult<f64> {
    eval::hit_ratio(&topn, &truth.into_iter().collect::<BTreeSet<_>>()).map_err(to_py)
}

#[pyfunction]
fn ndcg(topn: Vec<u32>, truth: Vec<u32>) -> PyResult<f64> {
    eval::ndcg(&topn, &truth.into_iter().collect::<BTreeSet<_>>()).map_err(to_py)
}

#[pyfunction]
fn novelty(topn: Vec<u32>, counts: Vec<u64>) -> PyResult<f64> {
    if let Some(&bad) = topn.iter().find(|&&i| i as usize >= counts.len()) {
        return Err(PyIndexError::new_err(format!("item {bad} has no count")));
    }
    Ok(eval::novelty(&topn, &counts))
}

#[pyfunction]
fn diversity(topn: Vec<u32>, item_topics: Vec<Vec<f64>>) -> PyResult<Option<f64>> {
    if let Some(&bad) = topn.iter().find(|&&i| i as usize >= item_topics.len()) {
        return Err(PyIndexError::new_err(format!("item {bad} has no topic vector")));
    }
    Ok(eval::diversity(&topn, &item_topics))
}

#[pymodule]
#[pyo3(name = "cngan")]
pub fn cngan_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(hit_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(novelty, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    Ok(())
}
