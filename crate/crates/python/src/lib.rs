//! Python bindings: documents, region extraction, edge encoding, synthetic
//! data, training, evaluation and rendering. Structured values cross the
//! boundary as plain dicts and lists (through the `json` module).

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use ::formlink as core;
use core::dataset::load_document;
use core::document::{parse_document, Document};
use core::edges::encode_document;
use core::embeddings::EmbeddingProvider;
use core::head::DecodeMode;
use core::model::{GraphInput, Model, ModelConfig};
use core::regions::{attach_regions, extract_regions, load_gray_png, RegionConfig};
use core::render::{render_overlay, OverlayScene, RenderMode, SceneLink};
use core::synth::{make_synthetic_dataset, write_dataset, SynthSpec};
use core::train::TrainConfig;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Deserializes a dict (or None for the default) into `T`.
fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj.filter(|o| !o.is_none()) else {
        return Ok(T::default());
    };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

/// One annotated page.
#[pyclass(name = "Document", module = "formlink", skip_from_py_object)]
#[derive(Clone)]
struct PyDocument {
    inner: Document,
}

#[pymethods]
impl PyDocument {
    /// Parses FUNSD-style JSON. Regions are not extracted.
    #[staticmethod]
    #[pyo3(signature = (text, doc_id = "doc", page_size = None))]
    fn from_json(text: &str, doc_id: &str, page_size: Option<(f64, f64)>) -> PyResult<Self> {
        let report = parse_document(doc_id, text.as_bytes(), page_size).map_err(err)?;
        Ok(Self { inner: report.document })
    }

    /// Loads an annotation file with its regions (using the sibling image if
    /// there is one).
    #[staticmethod]
    #[pyo3(signature = (path, page_size = None))]
    fn load(path: PathBuf, page_size: Option<(f64, f64)>) -> PyResult<Self> {
        Ok(Self { inner: load_document(&path, page_size, &RegionConfig::default()).map_err(err)? })
    }

    #[getter]
    fn doc_id(&self) -> &str {
        &self.inner.doc_id
    }

    #[getter]
    fn page_size(&self) -> (f64, f64) {
        (self.inner.page_width, self.inner.page_height)
    }

    #[getter]
    fn gold_links(&self) -> Vec<(i64, i64)> {
        self.inner.gold_links.iter().copied().collect()
    }

    #[getter]
    fn entities<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.entities)
    }

    #[getter]
    fn regions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.regions)
    }

    /// Re-extracts regions (table cells from `image` when given, then
    /// paragraphs) and assigns every entity its region.
    #[pyo3(signature = (image = None, h_ths = None, v_ths = None))]
    fn extract_regions<'py>(
        &mut self,
        py: Python<'py>,
        image: Option<PathBuf>,
        h_ths: Option<f64>,
        v_ths: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut cfg = RegionConfig::default();
        cfg.h_ths = h_ths.unwrap_or(cfg.h_ths);
        cfg.v_ths = v_ths.unwrap_or(cfg.v_ths);
        let img = image.as_deref().map(load_gray_png).transpose().map_err(err)?;
        let regions = extract_regions(&self.inner, img.as_ref(), &cfg);
        attach_regions(&mut self.inner, regions);
        to_py(py, &self.inner.regions)
    }

    /// `(question_id, answer_id, bits)` for every candidate pair.
    fn encode_edges(&self) -> Vec<(i64, i64, Vec<u8>)> {
        encode_document(&self.inner).into_iter().map(|(q, a, l)| (q, a, l.bits.iter().map(|&b| b as u8).collect())).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_funsd_json().to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Document({:?}, entities={}, links={}, regions={})",
            self.inner.doc_id,
            self.inner.entities.len(),
            self.inner.gold_links.len(),
            self.inner.regions.len()
        )
    }
}

fn docs_of(docs: &[PyRef<'_, PyDocument>]) -> Vec<Document> {
    docs.iter().map(|d| d.inner.clone()).collect()
}

/// A trained (or freshly initialized) link model.
#[pyclass(name = "Model", module = "formlink", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: Model,
}

impl PyModel {
    fn provider(&self, embeddings: Option<PathBuf>) -> PyResult<EmbeddingProvider> {
        let c = &self.inner.config;
        EmbeddingProvider::open(embeddings.as_deref(), c.feature_dim, c.hash_dim).map_err(err)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&Bound<'_, PyAny>>, seed: u64) -> PyResult<Self> {
        let config: ModelConfig = from_py(config)?;
        Ok(Self { inner: Model::new(config, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| err(core::Error::io(&path, e)))?;
        Ok(Self { inner: Model::from_checkpoint(&bytes).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_checkpoint()).map_err(|e| err(core::Error::io(&path, e)))
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// `(question_id, answer_id, p_link)` for every candidate pair.
    #[pyo3(signature = (doc, embeddings = None))]
    fn score(&self, doc: PyRef<'_, PyDocument>, embeddings: Option<PathBuf>) -> PyResult<Vec<(i64, i64, f64)>> {
        let provider = self.provider(embeddings)?;
        let graph = GraphInput::build(&doc.inner, &provider, &self.inner.config).map_err(err)?;
        let scored = self.inner.score(&graph).map_err(err)?;
        Ok(scored.iter().map(|s| (s.question, s.answer, s.score.p[1])).collect())
    }

    /// Precision, recall, F1 and counts over `docs`.
    #[pyo3(signature = (docs, decode = "argmax", embeddings = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        docs: Vec<PyRef<'py, PyDocument>>,
        decode: &str,
        embeddings: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mode: DecodeMode = parse(decode)?;
        let provider = self.provider(embeddings)?;
        let docs = docs_of(&docs);
        let report = py.detach(|| core::train::evaluate(&docs, &self.inner, &provider, mode)).map_err(err)?;
        to_py(py, &report)
    }

    /// One dict per document: `doc_id`, `links`, `scores`.
    #[pyo3(signature = (docs, decode = "argmax", embeddings = None))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        docs: Vec<PyRef<'py, PyDocument>>,
        decode: &str,
        embeddings: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mode: DecodeMode = parse(decode)?;
        let provider = self.provider(embeddings)?;
        let docs = docs_of(&docs);
        let preds = py.detach(|| core::train::predict(&docs, &self.inner, &provider, mode)).map_err(err)?;
        to_py(py, &preds)
    }
}

/// Synthetic pages. `spec` overrides generator fields; with `out_dir` the
/// pages are also written there (`.json`, `.png`, `.cells`).
#[pyfunction]
#[pyo3(signature = (spec = None, seed = 0, out_dir = None))]
fn synth(spec: Option<&Bound<'_, PyAny>>, seed: u64, out_dir: Option<PathBuf>) -> PyResult<Vec<PyDocument>> {
    let spec: SynthSpec = from_py(spec)?;
    let pages = make_synthetic_dataset(&spec, seed).map_err(err)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| err(core::Error::io(&dir, e)))?;
        write_dataset(&pages, &dir).map_err(err)?;
    }
    Ok(pages
        .into_iter()
        .map(|p| {
            let mut inner = p.document;
            let regions = extract_regions(&inner, Some(&p.image), &RegionConfig::default());
            attach_regions(&mut inner, regions);
            PyDocument::wrap(inner)
        })
        .collect())
}

impl PyDocument {
    fn wrap(inner: Document) -> Self {
        Self { inner }
    }
}

/// Loads every annotation file under `path` with regions attached.
#[pyfunction]
#[pyo3(signature = (path, page_size = None))]
fn load_dataset(path: PathBuf, page_size: Option<(f64, f64)>) -> PyResult<Vec<PyDocument>> {
    let docs = core::dataset::load_dataset(&path, page_size, &RegionConfig::default()).map_err(err)?;
    Ok(docs.into_iter().map(PyDocument::wrap).collect())
}

/// Trains a model. Returns `(model, trace)` where the trace is a list of
/// per-step dicts (`step`, `lr`, `binary`, `constraint`, `total`).
#[pyfunction]
#[pyo3(signature = (docs, config = None, held_out = None, embeddings = None))]
fn train<'py>(
    py: Python<'py>,
    docs: Vec<PyRef<'py, PyDocument>>,
    config: Option<&Bound<'py, PyAny>>,
    held_out: Option<Vec<PyRef<'py, PyDocument>>>,
    embeddings: Option<PathBuf>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let config: TrainConfig = from_py(config)?;
    let provider =
        EmbeddingProvider::open(embeddings.as_deref(), config.model.feature_dim, config.model.hash_dim).map_err(err)?;
    let docs = docs_of(&docs);
    let held_out = held_out.map(|h| docs_of(&h));
    let outcome = py.detach(|| core::train::train(&docs, &provider, &config, held_out.as_deref())).map_err(err)?;
    let trace = to_py(py, &outcome.trace)?;
    Ok((PyModel { inner: outcome.model }, trace))
}

/// SVG overlay. `links` defaults to the gold links; `mode` is
/// "predictions" or "regions".
#[pyfunction]
#[pyo3(signature = (doc, links = None, mode = "predictions"))]
fn render(doc: PyRef<'_, PyDocument>, links: Option<Vec<(i64, i64)>>, mode: &str) -> PyResult<String> {
    let mode: RenderMode = parse(mode)?;
    let links: Vec<SceneLink> = match links {
        Some(l) => l.into_iter().map(|(question, answer)| SceneLink { question, answer, score: None }).collect(),
        None => doc.inner.gold_links.iter().map(|&(question, answer)| SceneLink { question, answer, score: None }).collect(),
    };
    let scene = OverlayScene::from_document(&doc.inner, &links).map_err(err)?;
    Ok(render_overlay(&scene, mode))
}

/// Learning rate at `step` under linear warmup then linear decay.
#[pyfunction]
fn lr_schedule(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> f64 {
    core::nn::lr_schedule(step, total_steps, warmup_ratio, base_lr)
}

#[pymodule]
fn formlink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDocument>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    Ok(())
}
