//! Python bindings: corpora, training, scoring and evaluation.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use usermod::corpus::{self, compute_user_stats, SyntheticSpec};
use usermod::eval;
use usermod::models::ModelArtifact;
use usermod::trainer;
use usermod::{Baseline, Split, TrainConfig, Variant};

fn to_py(e: usermod::Error) -> PyErr {
    match e {
        usermod::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> PyResult<T> {
    s.parse().map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

#[pyclass(name = "Corpus", module = "usermod_py", frozen)]
struct PyCorpus {
    inner: usermod::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: corpus::ingest_corpus(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn split_len(&self, split: &str) -> PyResult<usize> {
        Ok(self.inner.split_len(parse("split", split)?))
    }

    /// `(user, T, rejected, user_type)` for every author, training authors
    /// first.
    fn user_stats(&self) -> Vec<(String, usize, usize, String)> {
        compute_user_stats(&self.inner)
            .users()
            .iter()
            .map(|u| (u.user.clone(), u.train_comments, u.train_rejected, u.utype.to_string()))
            .collect()
    }
}

#[pyclass(name = "Model", module = "usermod_py", frozen)]
struct PyModel {
    inner: usermod::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: usermod::Model::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant().name()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.parameter_count()
    }

    /// Reject probability of raw `text` written by `author`.
    fn score(&self, author: &str, text: &str) -> PyResult<f64> {
        self.inner.score_text(author, text).map_err(to_py)
    }

    fn score_split(&self, py: Python<'_>, corpus: &PyCorpus, split: &str) -> PyResult<Vec<f64>> {
        let split: Split = parse("split", split)?;
        let (scores, _) = py.detach(|| eval::score_split(&self.inner, &corpus.inner, split)).map_err(to_py)?;
        Ok(scores)
    }

    fn auc(&self, py: Python<'_>, corpus: &PyCorpus, split: &str) -> PyResult<f64> {
        let split: Split = parse("split", split)?;
        py.detach(|| eval::evaluate_auc(&self.inner, &corpus.inner, split)).map_err(to_py)
    }

    /// The artifact as a JSON string.
    fn to_json(&self) -> PyResult<String> {
        let bytes = ModelArtifact::from_model(&self.inner).to_bytes().map_err(to_py)?;
        Ok(String::from_utf8(bytes).expect("serde_json writes UTF-8"))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={}, d={}, m={}, params={})",
            self.inner.variant(),
            self.inner.params.embedding_dim(),
            self.inner.params.hidden_dim(),
            self.inner.params.parameter_count()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n_users=None, n_train=None, n_dev=None, n_test=None, seed=None))]
fn generate_synthetic(
    n_users: Option<usize>,
    n_train: Option<usize>,
    n_dev: Option<usize>,
    n_test: Option<usize>,
    seed: Option<u64>,
) -> PyResult<PyCorpus> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_users: n_users.unwrap_or(d.n_users),
        n_train: n_train.unwrap_or(d.n_train),
        n_dev: n_dev.unwrap_or(d.n_dev),
        n_test: n_test.unwrap_or(d.n_test),
        seed: seed.unwrap_or(d.seed),
        ..d
    };
    Ok(PyCorpus { inner: corpus::generate_synthetic(&spec).map_err(to_py)? })
}

/// Trains one model; returns it with its per-epoch history.
#[pyfunction]
#[pyo3(signature = (
    corpus, variant, seed=1, embedding_dim=None, hidden_dim=None, learning_rate=None,
    batch_size=None, max_epochs=None, patience=None, holdout_fraction=None, max_tokens=None
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    variant: &str,
    seed: u64,
    embedding_dim: Option<usize>,
    hidden_dim: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    holdout_fraction: Option<f64>,
    max_tokens: Option<usize>,
) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let variant: Variant = parse("variant", variant)?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        embedding_dim: embedding_dim.unwrap_or(d.embedding_dim),
        hidden_dim: hidden_dim.unwrap_or(d.hidden_dim),
        learning_rate: learning_rate.unwrap_or(d.learning_rate),
        batch_size: batch_size.unwrap_or(d.batch_size),
        max_epochs: max_epochs.unwrap_or(d.max_epochs),
        patience: patience.unwrap_or(d.patience),
        holdout_fraction: holdout_fraction.unwrap_or(d.holdout_fraction),
        max_tokens: max_tokens.unwrap_or(d.max_tokens),
        ..d
    };
    let (model, history) =
        py.detach(|| trainer::train_model(&corpus.inner, variant, &config, seed)).map_err(to_py)?;

    let out = PyDict::new(py);
    out.set_item("best_epoch", history.best_epoch)?;
    out.set_item("stop_reason", format!("{:?}", history.stop_reason))?;
    out.set_item("train_loss", history.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>())?;
    out.set_item("holdout_loss", history.epochs.iter().map(|e| e.holdout_loss).collect::<Vec<_>>())?;
    Ok((PyModel { inner: model }, out))
}

/// AUC of the uBASE or tBASE baseline built from `corpus`'s training split.
#[pyfunction]
fn baseline_auc(corpus: &PyCorpus, variant: &str, split: &str) -> PyResult<f64> {
    let variant: Variant = parse("variant", variant)?;
    let baseline = Baseline::new(variant, compute_user_stats(&corpus.inner)).map_err(to_py)?;
    eval::evaluate_auc(&baseline, &corpus.inner, parse("split", split)?).map_err(to_py)
}

#[pyfunction]
fn classify_user_type(train_comments: usize, rejection_rate: f64) -> PyResult<String> {
    Ok(corpus::classify_user_type(train_comments, rejection_rate).map_err(to_py)?.to_string())
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(to_py)
}

#[pyfunction]
fn mean_and_stderr(values: Vec<f64>) -> PyResult<(f64, f64)> {
    eval::mean_and_stderr(&values).map_err(to_py)
}

#[pyfunction]
fn format_percent(mean: f64, stderr: f64) -> String {
    eval::format_percent(mean, stderr)
}

#[pyfunction]
fn sigmoid(x: f64) -> f64 {
    usermod::nn::sigmoid(x)
}

/// Largest finite-difference relative error per neural variant.
#[pyfunction]
fn gradcheck(py: Python<'_>) -> PyResult<Vec<(String, f64)>> {
    let checks = py
        .detach(|| usermod::gradcheck::check_all(&usermod::gradcheck::GradcheckSetup::default()))
        .map_err(to_py)?;
    Ok(checks.into_iter().map(|c| (c.variant.to_string(), c.max_rel_error())).collect())
}

#[pymodule]
fn usermod_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_auc, m)?)?;
    m.add_function(wrap_pyfunction!(classify_user_type, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(mean_and_stderr, m)?)?;
    m.add_function(wrap_pyfunction!(format_percent, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    Ok(())
}
