//! Python bindings for the gatedrag pipeline.
//!
//! Structured results (query results, run summaries, fits) are returned as
//! plain dicts decoded from the same JSON the command-line tool writes.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gatedrag::cli::{CliConfig, Session};
use gatedrag::error::Error;
use gatedrag::eval::{self, QARecord};
use gatedrag::geometry::{self, AlphaModel, AngleSample};
use gatedrag::index::{self, Retriever};
use gatedrag::providers::ProviderSpec;
use gatedrag::{Chunk, ChunkingPolicy, EmbeddingVector};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::Config(_) | Error::InvalidInput(_) | Error::Degenerate(_) | Error::Format(_) => {
            PyValueError::new_err(msg)
        }
        Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

/// Decodes a serializable value into Python objects via `json.loads`.
fn to_object<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn vector(values: Vec<f64>) -> PyResult<EmbeddingVector> {
    EmbeddingVector::normalize(&values).map_err(to_py)
}

#[pyfunction]
fn ais_score(s1: f64, s2: f64) -> PyResult<f64> {
    geometry::ais_score(s1, s2).map_err(to_py)
}

#[pyfunction]
fn additive_score(s1: f64, s2: f64) -> PyResult<f64> {
    geometry::additive_score(s1, s2).map_err(to_py)
}

/// Angle between two vectors after normalizing both.
#[pyfunction]
fn angle(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    geometry::angle(&vector(a)?, &vector(b)?).map_err(to_py)
}

#[pyfunction]
fn alpha_from_angles(theta1: f64, theta2: f64) -> PyResult<f64> {
    geometry::alpha_from_angles(theta1, theta2).map_err(to_py)
}

#[pyfunction]
fn dynamic_angle(theta1: f64, theta2: f64, alpha: f64) -> PyResult<f64> {
    geometry::dynamic_angle(theta1, theta2, alpha).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (theta0, slope=0.058, intercept=0.455))]
fn predict_alpha(theta0: f64, slope: f64, intercept: f64) -> f64 {
    AlphaModel::new(slope, intercept).predict(theta0)
}

/// Least-squares fit of alpha on theta0 from `(theta0, alpha)` pairs.
#[pyfunction]
fn fit_alpha_model(py: Python<'_>, pairs: Vec<(f64, f64)>) -> PyResult<Py<PyAny>> {
    let samples: Vec<AngleSample> = pairs
        .into_iter()
        .map(|(theta0, alpha)| AngleSample {
            theta0,
            theta1: f64::NAN,
            theta2: f64::NAN,
            alpha,
        })
        .collect();
    let fit = geometry::fit_alpha_model(&samples).map_err(to_py)?;
    to_object(py, &fit)
}

#[pyfunction]
fn normalize_answer(s: &str) -> String {
    eval::normalize_answer(s)
}

#[pyfunction]
fn exact_match(prediction: &str, golds: Vec<String>) -> PyResult<u8> {
    eval::exact_match(prediction, &golds).map_err(to_py)
}

#[pyfunction]
fn f1_score(prediction: &str, golds: Vec<String>) -> PyResult<f64> {
    eval::f1_score(prediction, &golds).map_err(to_py)
}

/// Embeds texts with a mock embedder spec such as `"hash:64:0"`.
#[pyfunction]
fn embed(spec: &str, texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
    let embedder = ProviderSpec::from(spec).embedder().map_err(to_py)?;
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let out = embedder.embed(&refs).map_err(to_py)?;
    Ok(out.into_iter().map(|v| v.as_slice().to_vec()).collect())
}

/// Flat inner-product index over unit vectors.
#[pyclass(name = "VectorIndex", module = "gatedrag_py", frozen)]
struct PyVectorIndex {
    inner: index::VectorIndex,
}

#[pymethods]
impl PyVectorIndex {
    /// Embeds `(id, text)` records with `embedder` and builds an index.
    #[staticmethod]
    #[pyo3(signature = (records, embedder, chunking="passthrough"))]
    fn build(records: Vec<(String, String)>, embedder: &str, chunking: &str) -> PyResult<Self> {
        let policy: ChunkingPolicy = chunking.parse().map_err(to_py)?;
        let embedder = ProviderSpec::from(embedder).embedder().map_err(to_py)?;
        let chunks = records.into_iter().map(|(id, text)| Chunk::new(id, text));
        let inner = index::ingest(chunks, embedder.as_ref(), policy).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Builds an index from precomputed vectors (normalized on the way in).
    #[staticmethod]
    #[pyo3(signature = (ids, vectors, embedder_id="external"))]
    fn from_vectors(ids: Vec<String>, vectors: Vec<Vec<f64>>, embedder_id: &str) -> PyResult<Self> {
        let chunks = ids.into_iter().map(|id| Chunk::new(id, "")).collect();
        let vecs = vectors.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
        let inner = index::VectorIndex::from_parts(embedder_id, chunks, vecs).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: index::VectorIndex::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// The `n` most similar chunks as `(id, similarity)`, best first.
    fn top_n(&self, probe: Vec<f64>, n: usize) -> PyResult<Vec<(String, f64)>> {
        let hits = self.inner.top_n(&vector(probe)?, n).map_err(to_py)?;
        Ok(hits.into_iter().map(|h| (h.chunk_id, h.similarity)).collect())
    }

    fn embedding(&self, id: &str) -> Option<Vec<f64>> {
        self.inner.embedding(id).map(|v| v.as_slice().to_vec())
    }

    fn text(&self, id: &str) -> Option<String> {
        self.inner.chunk(id).map(|c| c.text.clone())
    }

    fn ids(&self) -> Vec<String> {
        self.inner.chunks().iter().map(|c| c.id.clone()).collect()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn embedder_id(&self) -> String {
        self.inner.embedder_id().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "VectorIndex(len={}, dimension={}, embedder_id={:?})",
            self.inner.len(),
            self.inner.dimension(),
            self.inner.embedder_id()
        )
    }
}

/// A configured pipeline over a saved index.
///
/// `config` takes the same keys as the CLI config file; relative paths in it
/// resolve against the working directory. `config_path` loads a file instead.
#[pyclass(name = "Pipeline", module = "gatedrag_py", frozen)]
struct PyPipeline {
    session: Session,
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (index_dir, config=None, config_path=None))]
    fn new(
        py: Python<'_>,
        index_dir: PathBuf,
        config: Option<&Bound<'_, PyDict>>,
        config_path: Option<PathBuf>,
    ) -> PyResult<Self> {
        let cfg = match (config, config_path) {
            (Some(_), Some(_)) => {
                return Err(PyValueError::new_err("pass config or config_path, not both"))
            }
            (Some(dict), None) => {
                let text: String = py.import("json")?.call_method1("dumps", (dict,))?.extract()?;
                let cfg: CliConfig = serde_json::from_str(&text)
                    .map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?;
                cfg
            }
            (None, Some(path)) => CliConfig::load(&path).map_err(to_py)?,
            (None, None) => CliConfig::default(),
        };
        cfg.pipeline.validate().map_err(to_py)?;
        Ok(Self {
            session: Session::open(&index_dir, cfg).map_err(to_py)?,
        })
    }

    #[getter]
    fn mode(&self) -> String {
        self.session.pipeline.config().mode.to_string()
    }

    /// Retriever activations since construction.
    #[getter]
    fn activations(&self) -> usize {
        self.session.index.activations()
    }

    fn run_query(&self, py: Python<'_>, question: &str) -> PyResult<Py<PyAny>> {
        let result = self.session.pipeline.run_query(question).map_err(to_py)?;
        to_object(py, &result)
    }

    /// Runs `(id, question, answers)` records and returns
    /// `{"aggregate": ..., "per_query": [...]}`.
    fn evaluate(&self, py: Python<'_>, records: Vec<(String, String, Vec<String>)>) -> PyResult<Py<PyAny>> {
        let records: Vec<QARecord> = records
            .into_iter()
            .map(|(id, question, answers)| QARecord {
                id,
                question,
                answers,
                gt_chunk_ids: None,
            })
            .collect();
        let results = self.session.pipeline.run_batch(&records).map_err(to_py)?;
        let report = eval::evaluate_run(&records, &results).map_err(to_py)?;
        to_object(py, &report)
    }

    /// Evaluates a JSON-lines dataset file.
    fn evaluate_file(&self, py: Python<'_>, dataset: PathBuf) -> PyResult<Py<PyAny>> {
        let records = eval::read_dataset_jsonl(dataset).map_err(to_py)?;
        let results = self.session.pipeline.run_batch(&records).map_err(to_py)?;
        let report = eval::evaluate_run(&records, &results).map_err(to_py)?;
        to_object(py, &report)
    }
}

#[pymodule]
fn gatedrag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ais_score, m)?)?;
    m.add_function(wrap_pyfunction!(additive_score, m)?)?;
    m.add_function(wrap_pyfunction!(angle, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_from_angles, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_angle, m)?)?;
    m.add_function(wrap_pyfunction!(predict_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(fit_alpha_model, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_class::<PyVectorIndex>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
