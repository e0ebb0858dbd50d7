//! Python bindings: datasets, networks, the selection and MixMatch helpers,
//! and whole pipeline runs returning their report as a dict.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use protosemi::config::{pipeline_from_pairs, pipeline_to_pairs, KeyValues};
use protosemi::select::Thresholds;
use protosemi::{self as ps, PipelineConfig, Variant};

fn to_py(e: ps::Error) -> PyErr {
    match e {
        ps::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e if e.is_degenerate() || matches!(e, ps::Error::Aborted { .. }) => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

/// A labeled dataset with true and working (possibly noisy) labels.
#[pyclass(name = "Dataset", module = "protosemi", frozen)]
struct PyDataset {
    inner: ps::NoisyDataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from feature rows, true labels and optional working labels.
    #[new]
    #[pyo3(signature = (features, true_labels, working_labels=None, num_classes=None))]
    fn new(
        features: Vec<Vec<f64>>,
        true_labels: Vec<usize>,
        working_labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
    ) -> PyResult<Self> {
        let working = working_labels.unwrap_or_else(|| true_labels.clone());
        if features.len() != true_labels.len() || working.len() != true_labels.len() {
            return Err(PyValueError::new_err("features and labels differ in length"));
        }
        let dim = features.first().map_or(0, Vec::len);
        let k = num_classes.unwrap_or_else(|| {
            true_labels.iter().chain(&working).max().map_or(0, |m| m + 1)
        });
        let samples = features
            .into_iter()
            .zip(true_labels.into_iter().zip(working))
            .map(|(x, (t, w))| ps::Sample::new(x, t, w))
            .collect();
        ps::NoisyDataset::new(samples, k, dim)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Gaussian blobs; returns `(train, heldout)` when `heldout_per_class > 0`.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (num_classes=4, per_class=500, dim=16, separation=6.0, spread=1.0, seed=0, heldout_per_class=0))]
    fn blobs(
        py: Python<'_>,
        num_classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        spread: f64,
        seed: u64,
        heldout_per_class: usize,
    ) -> PyResult<Py<PyAny>> {
        let params = ps::BlobParams {
            num_classes,
            per_class,
            dim,
            separation,
            spread,
            seed,
        };
        if heldout_per_class == 0 {
            let ds = params.generate().map_err(to_py)?;
            return Ok(Py::new(py, Self { inner: ds })?.into_any());
        }
        let (train, held) = params.generate_with_heldout(heldout_per_class).map_err(to_py)?;
        let pair = (Self { inner: train }, Self { inner: held });
        Ok(pair.into_pyobject(py)?.into_any().unbind())
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ps::NoisyDataset::load(path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// A copy with `rate` of the labels flipped uniformly to another class.
    fn with_factual_noise(&self, rate: f64, seed: u64) -> PyResult<Self> {
        ps::inject_factual_noise(&self.inner, rate, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// A copy with the `rate` most boundary-adjacent samples flipped.
    fn with_ambiguity_noise(&self, rate: f64, seed: u64) -> PyResult<Self> {
        ps::inject_ambiguity_noise(&self.inner, rate, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.samples().iter().map(|s| s.features().to_vec()).collect()
    }

    #[getter]
    fn true_labels(&self) -> Vec<usize> {
        self.inner.true_labels()
    }

    #[getter]
    fn working_labels(&self) -> Vec<usize> {
        self.inner.working_labels()
    }

    #[getter]
    fn noise_rate(&self) -> f64 {
        self.inner.noise_rate()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, k={}, d={}, noise_rate={:.3})",
            self.inner.len(),
            self.inner.num_classes(),
            self.inner.dim(),
            self.inner.noise_rate()
        )
    }
}

/// Fully connected tanh classifier.
#[pyclass(name = "Network", module = "protosemi")]
struct PyNetwork {
    inner: ps::Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (layer_dims, seed=0))]
    fn new(layer_dims: Vec<usize>, seed: u64) -> PyResult<Self> {
        ps::init_network(&layer_dims, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ps::Network::load(path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.layer_dims().to_vec()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    #[setter]
    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        if params.len() != self.inner.num_params() {
            return Err(PyValueError::new_err(format!(
                "expected {} parameters, got {}",
                self.inner.num_params(),
                params.len()
            )));
        }
        self.inner.params_mut().copy_from_slice(&params);
        Ok(())
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(to_py)
    }

    fn embed(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.embed(&x).map_err(to_py)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.predict(&x).map_err(to_py)
    }

    /// One epoch of mini-batch SGD on the working labels; returns the mean loss.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (dataset, epoch, total_epochs, base_lr=0.02, batch_size=64, weight_decay=5e-4, seed=0))]
    fn train_epoch(
        &mut self,
        dataset: &PyDataset,
        epoch: usize,
        total_epochs: usize,
        base_lr: f64,
        batch_size: usize,
        weight_decay: f64,
        seed: u64,
    ) -> PyResult<f64> {
        let config = ps::TrainConfig {
            base_lr,
            total_epochs,
            batch_size,
            weight_decay,
            seed,
        };
        ps::train_epoch(&mut self.inner, &dataset.inner.training_view(), &config, epoch).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Network(layer_dims={:?})", self.inner.layer_dims())
    }
}

#[pyfunction]
fn sharpen(p: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    ps::sharpen(&p, temperature).map_err(to_py)
}

#[pyfunction]
fn cosine_lr(epoch: usize, total: usize, base_lr: f64) -> PyResult<f64> {
    if total == 0 || epoch > total {
        return Err(PyValueError::new_err("need 0 <= epoch <= total and total >= 1"));
    }
    Ok(ps::cosine_lr(epoch, total, base_lr))
}

#[pyfunction]
fn cross_entropy(logits: Vec<f64>, label: usize) -> PyResult<f64> {
    ps::cross_entropy(&logits, label).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (d_max, alpha=0.95, beta=0.90))]
fn correction_probability(d_max: f64, alpha: f64, beta: f64) -> PyResult<f64> {
    let th = Thresholds::new(alpha, beta).map_err(to_py)?;
    ps::correction_probability(d_max, &th).map_err(to_py)
}

/// Confident `(index, label)` pairs and unconfident indices.
type Split = (Vec<(usize, usize)>, Vec<usize>);

#[pyfunction]
fn split_by_agreement(net: &PyNetwork, dataset: &PyDataset) -> PyResult<Split> {
    let p = ps::split_by_agreement(&net.inner, &dataset.inner).map_err(to_py)?;
    Ok((p.confident().to_vec(), p.unconfident().to_vec()))
}

/// Class prototypes from the samples the network already agrees with.
#[pyfunction]
fn build_prototypes(net: &PyNetwork, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
    let p = ps::split_by_agreement(&net.inner, &dataset.inner).map_err(to_py)?;
    let protos = ps::build_prototypes(&net.inner, &dataset.inner, &p).map_err(to_py)?;
    Ok(protos.rows().to_vec())
}

#[pyfunction]
fn similarity_to_prototypes(
    net: &PyNetwork,
    x: Vec<f64>,
    prototypes: Vec<Vec<f64>>,
) -> PyResult<Vec<f64>> {
    let counts = vec![1; prototypes.len()];
    let protos = ps::PrototypeMatrix::from_rows(prototypes, counts).map_err(to_py)?;
    ps::similarity_to_prototypes(&net.inner, &x, &protos).map_err(to_py)
}

#[pyfunction]
fn evaluate(net: &PyNetwork, heldout: &PyDataset) -> PyResult<f64> {
    ps::evaluate(&net.inner, &heldout.inner).map_err(to_py)
}

/// Configuration keys and their defaults, as accepted by `run`.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in pipeline_to_pairs(&PipelineConfig::default()) {
        d.set_item(k, v)?;
    }
    Ok(d)
}

fn config_from(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<PipelineConfig> {
    let mut pairs: Vec<(String, String)> = pipeline_to_pairs(&PipelineConfig::default())
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    if let Some(overrides) = overrides {
        for (k, v) in overrides.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<Vec<usize>>() {
                Ok(list) => list.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
                Err(_) => v.str()?.to_string(),
            };
            match pairs.iter_mut().find(|(k, _)| *k == key) {
                Some(slot) => slot.1 = value,
                None => return Err(PyValueError::new_err(format!("unknown config key `{key}`"))),
            }
        }
    }
    let mut kv = KeyValues::default();
    for (i, (k, v)) in pairs.iter().enumerate() {
        kv.push_line(&format!("{k} = {v}"), i + 1).map_err(to_py)?;
    }
    let config = pipeline_from_pairs(&mut kv).map_err(to_py)?;
    kv.finish().map_err(to_py)?;
    Ok(config)
}

/// Runs the pipeline (or an ablation) and returns the report as a dict.
///
/// Keyword arguments override configuration keys; see `default_config()`.
#[pyfunction]
#[pyo3(signature = (train, heldout, variant="full", **config))]
fn run<'py>(
    py: Python<'py>,
    train: &PyDataset,
    heldout: &PyDataset,
    variant: &str,
    config: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let variant: Variant = variant.parse().map_err(to_py)?;
    let config = config_from(config)?;
    let out = py
        .detach(|| ps::run_ablation(&train.inner, &heldout.inner, &config, variant))
        .map_err(to_py)?;
    let report = &out.report;

    let d = PyDict::new(py);
    d.set_item("variant", report.variant.to_string())?;
    d.set_item("layer_dims", report.layer_dims.clone())?;
    d.set_item("best_accuracy", report.best_accuracy())?;
    d.set_item("last_accuracy", report.last_accuracy())?;
    d.set_item("best_epoch", report.best_epoch().map(|e| e.epoch))?;
    let epochs = report
        .epochs
        .iter()
        .map(|e| {
            let row = PyDict::new(py);
            row.set_item("epoch", e.epoch)?;
            row.set_item("phase", e.phase.to_string())?;
            row.set_item("lr", e.lr)?;
            row.set_item("loss_labeled", e.loss_labeled)?;
            row.set_item("loss_unlabeled", e.loss_unlabeled)?;
            row.set_item("confident", e.confident)?;
            row.set_item("unconfident", e.unconfident)?;
            row.set_item("moved", e.moved)?;
            row.set_item("accuracy", e.accuracy)?;
            if let Some(s) = e.stats {
                let stats = PyDict::new(py);
                stats.set_item("unconfident", s.unconfident)?;
                stats.set_item("small_circle", s.small_circle)?;
                stats.set_item("corrected", s.corrected)?;
                stats.set_item("right", s.right)?;
                stats.set_item("accuracy", s.accuracy())?;
                row.set_item("stats", stats)?;
            } else {
                row.set_item("stats", py.None())?;
            }
            Ok(row)
        })
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("epochs", epochs)?;
    let config_dict = PyDict::new(py);
    for (k, v) in pipeline_to_pairs(&report.config) {
        config_dict.set_item(k, v)?;
    }
    d.set_item("config", config_dict)?;
    d.set_item("network", PyNetwork { inner: out.network })?;
    d.set_item("working_labels", out.dataset.working_labels())?;
    Ok(d)
}

/// Correction accuracy in percent for `right` out of `corrected`, or `None`.
#[pyfunction]
fn correction_accuracy(right: usize, corrected: usize) -> Option<f64> {
    ps::StatsRow {
        right,
        corrected,
        ..ps::StatsRow::default()
    }
    .accuracy()
}

#[pymodule]
#[pyo3(name = "protosemi")]
fn protosemi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(sharpen, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(correction_probability, m)?)?;
    m.add_function(wrap_pyfunction!(split_by_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(build_prototypes, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_to_prototypes, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(correction_accuracy, m)?)?;
    Ok(())
}
