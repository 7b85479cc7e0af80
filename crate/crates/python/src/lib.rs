//! Python bindings: weight sets, initialization, ensembling, the GP search,
//! evaluation statistics and the protocol driver.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use weightmix_core::config::ProtocolConfig;
use weightmix_core::data::{generate_cohort as gen_cohort, CohortConfig, CohortTag, IMAGE_LEN};
use weightmix_core::ensemble::{self, SimplexFactors};
use weightmix_core::gp::{self, BOConfig};
use weightmix_core::init::{self, ShrinkParams};
use weightmix_core::io::{weights_from_json, weights_to_json};
use weightmix_core::nn::{self as core_nn, NetworkSpec, TrainConfig};
use weightmix_core::protocol::{run_protocol, RunOptions, Stage};
use weightmix_core::reference::{published_fixture, replicate_paper_significance};
use weightmix_core::{agelfs, stats, Dataset, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for weightmix_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Parameters of the default 16x16 classifier (or any compatible network).
#[pyclass(name = "WeightSet", module = "weightmix", from_py_object)]
#[derive(Clone)]
struct PyWeightSet {
    inner: weightmix_core::WeightSet,
}

#[pymethods]
impl PyWeightSet {
    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// All parameters in layer order, kernel before bias.
    fn flatten(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    /// Layer shapes as `(layer_index, kernel_shape, bias_shape)`.
    fn shapes(&self) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
        self.inner
            .entries
            .iter()
            .map(|e| (e.layer_index, e.kernel.shape.clone(), e.bias.shape.clone()))
            .collect()
    }

    fn to_json(&self) -> String {
        weights_to_json(&NetworkSpec::desk_default().spec_hash(), &self.inner)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (_, inner) = weights_from_json(text).py()?;
        Ok(Self { inner })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("WeightSet({} layers, {} params)", self.inner.entries.len(), self.inner.num_params())
    }
}

fn wrap(inner: weightmix_core::WeightSet) -> PyWeightSet {
    PyWeightSet { inner }
}

fn unwrap_all(models: &[PyWeightSet]) -> Vec<weightmix_core::WeightSet> {
    models.iter().map(|m| m.inner.clone()).collect()
}

fn dataset(images: Vec<Vec<f64>>, labels: Vec<u8>) -> PyResult<Dataset> {
    if images.iter().any(|im| im.len() != IMAGE_LEN) {
        return Err(PyValueError::new_err(format!("every image must have {IMAGE_LEN} values")));
    }
    Dataset::new(IMAGE_LEN, images.concat(), labels).py()
}

fn parse_tag(tag: &str) -> PyResult<CohortTag> {
    Ok(match tag {
        "internal" => CohortTag::Internal,
        "ext_adult" => CohortTag::ExtAdult,
        "ext_ped2" => CohortTag::ExtPed2,
        "ext_ped11" => CohortTag::ExtPed11,
        "ext_ped18" => CohortTag::ExtPed18,
        "pretext" => CohortTag::Pretext,
        other => return Err(PyValueError::new_err(format!("unknown cohort tag {other:?}"))),
    })
}

/// Synthetic cohort as `(images, labels, group_ids)`; each image is a flat 256-vector.
#[pyfunction]
fn generate_cohort(tag: &str, n_samples: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<u8>, Vec<u32>)> {
    let cohort = gen_cohort(&CohortConfig::preset(parse_tag(tag)?, n_samples, seed)).py()?;
    let mut images = Vec::with_capacity(cohort.samples.len());
    let mut labels = Vec::with_capacity(cohort.samples.len());
    let mut groups = Vec::with_capacity(cohort.samples.len());
    for s in cohort.samples {
        images.push(s.image);
        labels.push(s.label);
        groups.push(s.group_id);
    }
    Ok((images, labels, groups))
}

#[pyfunction]
fn cold_init(seed: u64) -> PyResult<PyWeightSet> {
    init::cold_init(&NetworkSpec::desk_default(), seed).py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (weights, alpha, beta_scale = init::DEFAULT_BETA, noise_seed = 0))]
fn shrink_perturb(weights: &PyWeightSet, alpha: f64, beta_scale: f64, noise_seed: u64) -> PyResult<PyWeightSet> {
    let params = ShrinkParams::new(alpha, beta_scale, noise_seed).py()?;
    init::shrink_perturb(&weights.inner, &params).py().map(wrap)
}

/// Trains from `init`; returns the best checkpoint and `(train_loss, val_loss)` per epoch.
#[pyfunction]
#[pyo3(signature = (init, train_images, train_labels, val_images, val_labels, max_epochs = 20, patience = 4, learning_rate = 0.001, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    init: &PyWeightSet,
    train_images: Vec<Vec<f64>>,
    train_labels: Vec<u8>,
    val_images: Vec<Vec<f64>>,
    val_labels: Vec<u8>,
    max_epochs: usize,
    patience: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<(PyWeightSet, Vec<(f64, f64)>)> {
    let tr = dataset(train_images, train_labels)?;
    let va = dataset(val_images, val_labels)?;
    let cfg = TrainConfig { max_epochs, patience, learning_rate, rng_seed: seed, ..TrainConfig::default() };
    let init = init.inner.clone();
    let result = py
        .detach(|| core_nn::train(&NetworkSpec::desk_default(), &init, &tr, &va, &cfg))
        .py()?;
    let history = result.history.iter().map(|r| (r.train_loss, r.val_loss)).collect();
    Ok((wrap(result.best.weights), history))
}

#[pyfunction]
fn positive_scores(weights: &PyWeightSet, images: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let n = images.len();
    let data = dataset(images, vec![0; n])?;
    let net = core_nn::Network::new(&NetworkSpec::desk_default()).py()?;
    NetworkSpec::desk_default().check_weights(&weights.inner).py()?;
    Ok(net.positive_scores(&weights.inner, &data))
}

#[pyfunction]
fn weighted_average(models: Vec<PyWeightSet>, factors: Vec<f64>) -> PyResult<PyWeightSet> {
    let f = SimplexFactors::new(factors).py()?;
    ensemble::weighted_average(&unwrap_all(&models), &f).py().map(wrap)
}

#[pyfunction]
fn ewa(models: Vec<PyWeightSet>) -> PyResult<PyWeightSet> {
    ensemble::ewa(&unwrap_all(&models)).py().map(wrap)
}

/// Searches mixing factors maximizing validation F; returns `(factors, weights, validation_error)`.
#[pyfunction]
#[pyo3(signature = (models, val_images, val_labels, restarts = 100, seed = 0))]
fn fslsqp(
    py: Python<'_>,
    models: Vec<PyWeightSet>,
    val_images: Vec<Vec<f64>>,
    val_labels: Vec<u8>,
    restarts: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, PyWeightSet, f64)> {
    let val = dataset(val_images, val_labels)?;
    let models = unwrap_all(&models);
    let cfg = ensemble::FslsqpConfig { restarts, seed, ..Default::default() };
    let r = py
        .detach(|| ensemble::fslsqp(&models, &NetworkSpec::desk_default(), &val, &cfg))
        .py()?;
    Ok((r.factors.as_slice().to_vec(), wrap(r.weights), r.validation_error))
}

#[pyfunction]
fn fuzzy_softmax(logits: Vec<f64>, fuzziness: f64) -> PyResult<Vec<f64>> {
    agelfs::fuzzy_softmax(&logits, fuzziness).py()
}

/// GP minimization of a Python callable; returns `(best_alpha, best_value, trace)`.
#[pyfunction]
#[pyo3(signature = (objective, lower = 0.1, upper = 0.9, n_calls = 100, n_random_starts = 30, seed = 0))]
fn gp_minimize(
    objective: Bound<'_, PyAny>,
    lower: f64,
    upper: f64,
    n_calls: usize,
    n_random_starts: usize,
    seed: u64,
) -> PyResult<(f64, f64, Vec<(f64, f64, String)>)> {
    let cfg = BOConfig { lower, upper, n_calls, n_random_starts, seed, ..BOConfig::default() };
    let mut failure: Option<PyErr> = None;
    let r = gp::minimize(
        |a| match objective.call1((a,)).and_then(|v| v.extract::<f64>()) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &cfg,
    )
    .py()?;
    if let Some(e) = failure {
        return Err(e);
    }
    let trace = r.trace.iter().map(|o| (o.alpha, o.objective, o.phase.as_str().to_string())).collect();
    Ok((r.best_alpha, r.best_value, trace))
}

#[pyfunction]
#[pyo3(signature = (k, n, level = 0.95))]
fn clopper_pearson(k: u64, n: u64, level: f64) -> PyResult<(f64, f64)> {
    stats::clopper_pearson(k, n, level).py()
}

#[pyfunction]
#[pyo3(signature = (mcc, n, level = 0.95))]
fn mcc_ci(mcc: f64, n: u64, level: f64) -> PyResult<(f64, f64)> {
    stats::mcc_ci(mcc, n, level).py()
}

#[pyfunction]
fn optimal_threshold(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    stats::optimal_threshold(&scores, &labels).py()
}

#[pyfunction]
fn auprc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    stats::auprc(&scores, &labels).py()
}

/// Threshold metrics, AUPRC and the MCC interval as a dict.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<u8>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let m = stats::metrics_report(&scores, &labels, threshold).py()?;
    let d = PyDict::new(py);
    d.set_item("auprc", m.auprc)?;
    d.set_item("balanced_accuracy", m.balanced_accuracy)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f_score", m.f_score)?;
    d.set_item("mcc", m.mcc)?;
    d.set_item("mcc_ci", m.mcc_ci)?;
    d.set_item("threshold", m.threshold)?;
    d.set_item("counts", (m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_))?;
    Ok(d)
}

#[pyfunction]
fn significance<'py>(
    py: Python<'py>,
    mcc1: f64,
    ci1: (f64, f64),
    mcc2: f64,
    ci2: (f64, f64),
) -> PyResult<Bound<'py, PyDict>> {
    let s = stats::significance(mcc1, ci1, mcc2, ci2).py()?;
    let d = PyDict::new(py);
    d.set_item("se1", s.se1)?;
    d.set_item("se2", s.se2)?;
    d.set_item("delta_mcc", s.delta_mcc)?;
    d.set_item("delta_se", s.delta_se)?;
    d.set_item("z", s.z)?;
    d.set_item("p_two_tailed", s.p_two_tailed)?;
    d.set_item("significant", s.significant)?;
    Ok(d)
}

#[pyfunction]
fn emd_1d(a: &PyWeightSet, b: &PyWeightSet) -> PyResult<f64> {
    stats::emd_1d(&a.inner, &b.inner).py()
}

#[pyfunction]
fn weight_correlation(a: &PyWeightSet, b: &PyWeightSet) -> PyResult<f64> {
    stats::weight_correlation(&a.inner, &b.inner).py()
}

/// Significance chain over the published MCC values: `(group, test_set, model1, model2, z, p, significant)`.
#[pyfunction]
fn replicate_paper() -> PyResult<Vec<(String, String, String, String, f64, f64, bool)>> {
    let rows = replicate_paper_significance(&published_fixture()).py()?;
    Ok(rows
        .into_iter()
        .map(|r| (r.label, r.test_set, r.model1, r.model2, r.result.z, r.result.p_two_tailed, r.result.significant))
        .collect())
}

/// Runs the protocol into `out`; returns the run manifest as JSON text.
#[pyfunction]
#[pyo3(signature = (out, config_toml = None, seed = None, until = "report"))]
fn run(py: Python<'_>, out: PathBuf, config_toml: Option<&str>, seed: Option<u64>, until: &str) -> PyResult<String> {
    let mut cfg = match config_toml {
        Some(t) => ProtocolConfig::from_toml(t).py()?,
        None => ProtocolConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.output_dir = out;
    let until: Stage = until.parse().py()?;
    let manifest = py.detach(|| run_protocol(&cfg, &RunOptions { until, verbose: false })).py()?;
    serde_json::to_string_pretty(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn weightmix(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWeightSet>()?;
    m.add_function(wrap_pyfunction!(generate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(cold_init, m)?)?;
    m.add_function(wrap_pyfunction!(shrink_perturb, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(positive_scores, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_average, m)?)?;
    m.add_function(wrap_pyfunction!(ewa, m)?)?;
    m.add_function(wrap_pyfunction!(fslsqp, m)?)?;
    m.add_function(wrap_pyfunction!(fuzzy_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(gp_minimize, m)?)?;
    m.add_function(wrap_pyfunction!(clopper_pearson, m)?)?;
    m.add_function(wrap_pyfunction!(mcc_ci, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(significance, m)?)?;
    m.add_function(wrap_pyfunction!(emd_1d, m)?)?;
    m.add_function(wrap_pyfunction!(weight_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(replicate_paper, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
