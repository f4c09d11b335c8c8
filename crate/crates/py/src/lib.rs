//! Python bindings: synthesis, preprocessing, embeddings, retrieval and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use sarret::doppler::{estimate_doppler, DopplerField};
use sarret::encoder::{
    baseline_descriptor, embed, model_version, read_checkpoint, train_autoencoder, write_checkpoint, AutoEncoder,
    EncoderConfig, EncoderKind, InputStack, Representation, TrainConfig,
};
use sarret::eval::{mcnemar_test, precision_at_k, run_experiment, ExperimentConfig};
use sarret::pipeline::{build_representations, PipelineConfig};
use sarret::preprocess::CalibrationProfile;
use sarret::retrieval::{build_index, load_index, save_index, RetrievalIndex};
use sarret::sarv::{read_vignette, write_vignette};
use sarret::synth::{synth_vignette, SynthGeometry, SynthParams};
use sarret::{ClassLabel, ComplexVignette, Error, VignetteMeta};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::UnknownId(id) => PyKeyError::new_err(id),
        e => PyValueError::new_err(format!("{}: {e}", e.kind())),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

#[pyclass(name = "Vignette", module = "sarret", skip_from_py_object)]
#[derive(Clone)]
pub struct PyVignette {
    inner: ComplexVignette,
}

#[pymethods]
impl PyVignette {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        read_vignette(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_vignette(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows(), self.inner.cols())
    }

    #[getter]
    fn prf(&self) -> f64 {
        self.inner.prf
    }

    /// Class abbreviation, or `None` when unlabeled.
    #[getter]
    fn class_label(&self) -> Option<&'static str> {
        self.inner.meta.class().map(|c| c.abbreviation())
    }

    fn mean_power(&self) -> f64 {
        self.inner.mean_power()
    }

    /// Stacks for the given representations, on a 64 x 64 grid unless `dims` is set.
    #[pyo3(signature = (representations = vec!["VIG".to_string(), "SUBAP".to_string(), "DOP_VIG".to_string(), "DOP_SUBAP".to_string()], dims = None))]
    fn stacks(&self, representations: Vec<String>, dims: Option<(usize, usize)>) -> PyResult<Vec<PyInputStack>> {
        let reps = representations.iter().map(|r| parse::<Representation>(r)).collect::<PyResult<Vec<_>>>()?;
        let mut cfg = PipelineConfig::default();
        if let Some(d) = dims {
            cfg.dims = d;
        }
        let profile = CalibrationProfile::ones(self.inner.cols());
        build_representations(&self.inner, &profile, &cfg, &reps)
            .map(|v| v.into_iter().map(|inner| PyInputStack { inner }).collect())
            .map_err(py_err)
    }

    /// Full-resolution Doppler centroid field with a `d1` x `d2` averaging window.
    #[pyo3(signature = (d1 = 32, d2 = 32))]
    fn doppler(&self, d1: usize, d2: usize) -> PyResult<PyDopplerField> {
        estimate_doppler(self.inner.data.view(), self.inner.prf, d1, d2)
            .map(|inner| PyDopplerField { inner })
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Vignette(id={:?}, shape={:?})", self.inner.id, self.shape())
    }
}

#[pyclass(name = "DopplerField", module = "sarret", frozen)]
pub struct PyDopplerField {
    inner: DopplerField,
}

#[pymethods]
impl PyDopplerField {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.data.dim()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.data.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

#[pyclass(name = "InputStack", module = "sarret", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyInputStack {
    inner: InputStack,
}

#[pymethods]
impl PyInputStack {
    #[getter]
    fn source_id(&self) -> &str {
        &self.inner.source_id
    }

    #[getter]
    fn representation(&self) -> &'static str {
        self.inner.representation.as_str()
    }

    /// (channels, rows, cols)
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.data.dim()
    }

    fn to_list(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .data
            .outer_iter()
            .map(|c| c.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect()
    }

    fn baseline(&self) -> PyResult<Vec<f64>> {
        baseline_descriptor(&self.inner).map(|e| e.vector).map_err(py_err)
    }
}

#[pyclass(name = "AutoEncoder", module = "sarret")]
pub struct PyAutoEncoder {
    inner: AutoEncoder,
    version: String,
}

impl PyAutoEncoder {
    fn wrap(inner: AutoEncoder) -> PyResult<Self> {
        let version = model_version(&inner).map_err(py_err)?;
        Ok(Self { inner, version })
    }
}

#[pymethods]
impl PyAutoEncoder {
    /// Untrained model with the desk widths.
    #[new]
    #[pyo3(signature = (channels, dims = (64, 64), seed = 0))]
    fn new(channels: usize, dims: (usize, usize), seed: u64) -> PyResult<Self> {
        let cfg = EncoderConfig {
            input_dims: dims,
            ..EncoderConfig::desk(channels, seed)
        };
        Self::wrap(AutoEncoder::new(cfg).map_err(py_err)?)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::wrap(read_checkpoint(&path).map_err(py_err)?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn version(&self) -> &str {
        &self.version
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.config.embedding_dim()
    }

    /// Trains in place and returns the per-epoch (train, val) losses.
    #[pyo3(signature = (train, val, epochs = 10, batch_size = 16, lr = 1e-3, seed = 0))]
    fn train(
        &mut self,
        py: Python<'_>,
        train: Vec<PyInputStack>,
        val: Vec<PyInputStack>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Vec<(f64, f64)>> {
        let train: Vec<InputStack> = train.into_iter().map(|s| s.inner).collect();
        let val: Vec<InputStack> = val.into_iter().map(|s| s.inner).collect();
        let tc = TrainConfig {
            epochs,
            batch_size,
            lr,
            seed,
        };
        let cfg = self.inner.config.clone();
        let (model, report) = py
            .detach(|| train_autoencoder(&train, &val, &cfg, &tc))
            .map_err(py_err)?;
        *self = Self::wrap(model)?;
        Ok(report.history.iter().map(|m| (m.train_loss, m.val_loss)).collect())
    }

    fn embed(&self, stack: &PyInputStack) -> PyResult<Vec<f64>> {
        embed(&self.inner, &stack.inner, &self.version).map(|e| e.vector).map_err(py_err)
    }
}

#[pyclass(name = "Index", module = "sarret", frozen)]
pub struct PyIndex {
    inner: RetrievalIndex,
}

#[pymethods]
impl PyIndex {
    /// Builds from `(id, vector, class)` triples; `class` is an abbreviation, an index or `None`.
    #[new]
    #[pyo3(signature = (items, representation = "SUBAP", encoder = "AUTOENC", version = "py"))]
    fn new(
        items: Vec<(String, Vec<f64>, Option<String>)>,
        representation: &str,
        encoder: &str,
        version: &str,
    ) -> PyResult<Self> {
        let representation: Representation = parse(representation)?;
        let encoder: EncoderKind = parse(encoder)?;
        let items = items
            .into_iter()
            .map(|(id, vector, class)| {
                let meta = match class {
                    Some(c) => VignetteMeta::with_class(parse::<ClassLabel>(&c)?),
                    None => VignetteMeta::default(),
                };
                let e = sarret::encoder::Embedding {
                    id,
                    vector,
                    representation,
                    encoder,
                    version: version.to_string(),
                };
                Ok((e, meta))
            })
            .collect::<PyResult<Vec<_>>>()?;
        build_index(items).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_index(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_index(&self.inner, &path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.entries().iter().map(|e| e.id.clone()).collect()
    }

    fn vector(&self, id: &str) -> PyResult<Vec<f64>> {
        self.inner
            .get(id)
            .map(|e| e.vector.iter().map(|&v| v as f64).collect())
            .ok_or_else(|| PyKeyError::new_err(id.to_string()))
    }

    /// Returns `(id, similarity, rank, class)` tuples, best first.
    #[pyo3(signature = (vector, k = 10, exclude = None))]
    fn query(
        &self,
        vector: Vec<f64>,
        k: usize,
        exclude: Option<&str>,
    ) -> PyResult<Vec<(String, f64, usize, Option<&'static str>)>> {
        let ranked = self.inner.query_excluding(&vector, k, exclude).map_err(py_err)?;
        Ok(ranked
            .into_iter()
            .map(|r| (r.id, r.similarity, r.rank, r.meta.class().map(|c| c.abbreviation())))
            .collect())
    }
}

/// Seeded synthetic vignette of the given class.
#[pyfunction]
#[pyo3(signature = (class_label, seed, rows = 640, cols = 640, ramp_hz = 0.0))]
fn synth(class_label: &str, seed: u64, rows: usize, cols: usize, ramp_hz: f64) -> PyResult<PyVignette> {
    let class: ClassLabel = parse(class_label)?;
    let p = SynthParams::new(class, seed).with_size(rows, cols).with_ramp(ramp_hz);
    synth_vignette(&p, &SynthGeometry::default())
        .map(|inner| PyVignette { inner })
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(name = "precision_at_k")]
fn py_precision_at_k(ranked_labels: Vec<String>, query_label: String, k: usize) -> PyResult<f64> {
    precision_at_k(&ranked_labels, &query_label, k).map_err(py_err)
}

/// Returns `(statistic, p_value, b01, b10)`.
#[pyfunction]
#[pyo3(name = "mcnemar")]
fn py_mcnemar(correct_a: Vec<bool>, correct_b: Vec<bool>) -> PyResult<(f64, f64, usize, usize)> {
    let t = mcnemar_test(&correct_a, &correct_b).map_err(py_err)?;
    Ok((t.statistic, t.p_value, t.b01, t.b10))
}

/// Runs an experiment from a JSON config, or the named preset `"small"` / `"default"`,
/// and returns the report as JSON.
#[pyfunction]
#[pyo3(name = "run_experiment", signature = (config = "small", seed = None))]
fn py_run_experiment(py: Python<'_>, config: &str, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = match config {
        "small" => ExperimentConfig::small(),
        "default" => ExperimentConfig::default(),
        json => serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = py.detach(|| run_experiment(&cfg)).map_err(py_err)?;
    out.report.to_json().map_err(py_err)
}

#[pymodule]
#[pyo3(name = "sarret")]
fn sarret_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVignette>()?;
    m.add_class::<PyDopplerField>()?;
    m.add_class::<PyInputStack>()?;
    m.add_class::<PyAutoEncoder>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(py_precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(py_mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(py_run_experiment, m)?)?;
    m.add(
        "CLASSES",
        ClassLabel::ALL.iter().map(|c| c.abbreviation()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
