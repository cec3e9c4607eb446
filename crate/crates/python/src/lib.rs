//! Python bindings: datasets, the rewrite pipeline, baselines and the
//! grounding model. Reports come back as plain dicts.

use std::path::PathBuf;

use groundkit::benchkit::{self, Assignment, Baseline, SynthConfig};
use groundkit::data::{self, BoundingBox};
use groundkit::error::{Error, ErrorKind};
use groundkit::grounder::{self, ExperimentConfig, Vocab};
use groundkit::rulekit::{self, RuleSet, SplitSpec};
use pyo3::exceptions::{PyArithmeticError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Usage => PyValueError::new_err(e.to_string()),
        ErrorKind::Data => PyValueError::new_err(format!("data error: {e}")),
        ErrorKind::Numeric => PyArithmeticError::new_err(e.to_string()),
    }
}

/// Round-trips through `json.loads` so nested reports become dicts and lists.
fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn bbox(b: (f64, f64, f64, f64)) -> BoundingBox {
    BoundingBox::new(b.0, b.1, b.2, b.3)
}

/// Intersection over union of two `(x1, y1, x2, y2)` boxes.
#[pyfunction]
fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    groundkit::geometry::iou(&bbox(a), &bbox(b)).map_err(to_py)
}

/// The 7-dim normalized location feature of a box in a `width x height` image.
#[pyfunction]
fn location_feature(b: (f64, f64, f64, f64), width: f64, height: f64) -> PyResult<Vec<f64>> {
    Ok(groundkit::geometry::location_feature(&bbox(b), width, height)
        .map_err(to_py)?
        .0
        .to_vec())
}

#[pyclass(name = "Dataset", module = "pygroundkit")]
#[derive(Clone)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::read_dataset(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n_samples, max_persons=5, context_rate=0.5, d_vis=32, seed=0))]
    fn synth(n_samples: usize, max_persons: usize, context_rate: f64, d_vis: usize, seed: u64) -> PyResult<Self> {
        let cfg = SynthConfig {
            n_samples,
            max_persons,
            context_rate,
            d_vis,
            seed,
            ..SynthConfig::default()
        };
        Ok(Self {
            inner: benchkit::synth_generate(&cfg).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        data::write_dataset(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    #[getter]
    fn d_vis(&self) -> usize {
        self.inner.header.d_vis
    }

    fn sample_ids(&self) -> Vec<String> {
        self.inner.samples.iter().map(|s| s.sample_id.clone()).collect()
    }

    /// Sample `i` as a dict: id, type, statement, labels and person boxes.
    fn sample(&self, py: Python<'_>, i: usize) -> PyResult<PyObject> {
        let s = self
            .inner
            .samples
            .get(i)
            .ok_or_else(|| PyKeyError::new_err(format!("no sample {i}")))?;
        let summary = serde_json::json!({
            "sample_id": s.sample_id,
            "commonsense_type": s.commonsense_type.as_str(),
            "statement": data::render_tokens(&s.description.tokens),
            "labels": s.labels.pairs,
            "persons": s.image.persons.iter().map(|p| [p.bbox.x1, p.bbox.y1, p.bbox.x2, p.bbox.y2]).collect::<Vec<_>>(),
            "context_objects": s.image.context_objects.iter().map(|c| c.class_name.clone()).collect::<Vec<_>>(),
        });
        to_object(py, &summary)
    }

    fn stats(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_object(py, &data::dataset_stats(&self.inner.samples))
    }

    /// Expected accuracy of a uniform guess, E[1/N] over links.
    fn chance_accuracy(&self) -> f64 {
        benchkit::chance_accuracy(&self.inner.samples)
    }

    /// `(train, test)` by a seeded per-id hash.
    #[pyo3(signature = (test_fraction=0.2, seed=0))]
    fn holdout_split(&self, test_fraction: f64, seed: u64) -> (Self, Self) {
        let (train, test) = groundkit::cli::holdout_split(&self.inner, test_fraction, seed);
        (Self { inner: train }, Self { inner: test })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(samples={}, d_vis={})", self.inner.samples.len(), self.inner.header.d_vis)
    }
}

/// Rewrite a QA corpus file with the built-in rules.
/// Returns `(train, validation, test, report)`.
#[pyfunction]
#[pyo3(signature = (path, seed=0))]
fn transform(py: Python<'_>, path: PathBuf, seed: u64) -> PyResult<(PyDataset, PyDataset, PyDataset, PyObject)> {
    let corpus = rulekit::read_qa_file(path).map_err(to_py)?;
    let split = SplitSpec {
        seed,
        ..SplitSpec::default()
    };
    let out = rulekit::run_pipeline(&corpus, &RuleSet::default_rules(), &split).map_err(to_py)?;
    let report = to_object(py, &out.report)?;
    Ok((
        PyDataset { inner: out.train },
        PyDataset { inner: out.validation },
        PyDataset { inner: out.test },
        report,
    ))
}

/// Evaluate a named heuristic baseline; returns the accuracy report.
#[pyfunction]
#[pyo3(signature = (dataset, name, seed=0))]
fn baseline(py: Python<'_>, dataset: &PyDataset, name: &str, seed: u64) -> PyResult<PyObject> {
    let b = Baseline::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown baseline {name:?}")))?;
    let samples = &dataset.inner.samples;
    let a: Vec<Assignment> = samples.iter().map(|s| b.assign(s, seed)).collect();
    to_object(py, &benchkit::evaluate(&a, samples).map_err(to_py)?)
}

#[pyclass(name = "Model", module = "pygroundkit")]
struct PyModel {
    inner: grounder::GroundingModel,
    config: ExperimentConfig,
}

#[pymethods]
impl PyModel {
    /// Train a fresh model from a `key = value` config file.
    #[staticmethod]
    #[pyo3(signature = (dataset, config, steps=None, seed=None))]
    fn train(dataset: &PyDataset, config: PathBuf, steps: Option<usize>, seed: Option<u64>) -> PyResult<(Self, Vec<f64>)> {
        let mut cfg = ExperimentConfig::load(config).map_err(to_py)?;
        if let Some(n) = steps {
            cfg.schedule.steps = n;
        }
        if let Some(s) = seed {
            cfg.model.seed = s;
            cfg.model.encoder.seed = s;
            cfg.schedule.seed = s;
        }
        let samples = &dataset.inner.samples;
        let vocab = Vocab::build(samples, &cfg.model.neutral_names);
        let mut model = grounder::GroundingModel::new(cfg.model.clone(), vocab).map_err(to_py)?;
        let report = grounder::train(&mut model, samples, &cfg.schedule, &mut |_, _| {}).map_err(to_py)?;
        let losses = report.losses.iter().map(|l| l.total).collect();
        Ok((Self { inner: model, config: cfg }, losses))
    }

    /// Load a checkpoint; the config defaults to its `.cfg` sidecar.
    #[staticmethod]
    #[pyo3(signature = (checkpoint, config=None))]
    fn load(checkpoint: PathBuf, config: Option<PathBuf>) -> PyResult<Self> {
        let cfg_path = config.unwrap_or_else(|| {
            let mut s = checkpoint.as_os_str().to_owned();
            s.push(".cfg");
            s.into()
        });
        let cfg = ExperimentConfig::load(cfg_path).map_err(to_py)?;
        let model = grounder::load_model(cfg.model.clone(), &checkpoint).map_err(to_py)?;
        Ok(Self { inner: model, config: cfg })
    }

    /// Write the checkpoint plus `.vocab` and `.cfg` sidecars.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        grounder::save_model(&self.inner, &path).map_err(to_py)?;
        let mut cfg_path = path.into_os_string();
        cfg_path.push(".cfg");
        std::fs::write(&cfg_path, self.config.render()).map_err(|e| to_py(Error::io(&PathBuf::from(&cfg_path), e)))
    }

    /// One `{link_id: person_index}` dict per sample.
    fn predict(&self, dataset: &PyDataset) -> PyResult<Vec<std::collections::BTreeMap<u32, usize>>> {
        let preds = grounder::predict_samples(&self.inner, &dataset.inner.samples).map_err(to_py)?;
        Ok(preds
            .iter()
            .map(|p| p.link_ids.iter().copied().zip(p.chosen.iter().copied()).collect())
            .collect())
    }

    fn evaluate(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<PyObject> {
        let samples = &dataset.inner.samples;
        let preds = grounder::predict_samples(&self.inner, samples).map_err(to_py)?;
        let a: Vec<Assignment> = samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| Assignment::from_prediction(&s.sample_id, p))
            .collect();
        to_object(py, &benchkit::evaluate(&a, samples).map_err(to_py)?)
    }

    #[getter]
    fn n_parameters(&self) -> usize {
        self.inner.params.iter().map(|(_, _, t)| t.data().len()).sum()
    }
}

#[pymodule]
fn pygroundkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(location_feature, m)?)?;
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    Ok(())
}
