//! Python bindings for the unlearning laboratory.
//!
//! The module mirrors the library pipeline: generate a synthetic task,
//! pretrain a classifier, pick a forget split, run an unlearning method,
//! and evaluate accuracies plus the two membership attacks. Scalars cross
//! the boundary as plain Python values; the run trace is handed over as
//! JSON so callers can feed it straight to `json.loads`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gradtau::baselines::FitConfig;
use gradtau::config::ExperimentConfig;
use gradtau::data::{generate_synthetic, make_split, SplitSpec, SyntheticSpec};
use gradtau::nn::{entropy_of, ModelParams};
use gradtau::report::{self, Method};
use gradtau::Error;

/// Mistakes in the arguments become `ValueError`; failures mid-run
/// become `RuntimeError`.
fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::UnknownMethod { .. }
        | Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidDistribution(_)
        | Error::LabelOutOfRange { .. }
        | Error::ShapeMismatch { .. } => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

/// A synthetic classification task: noisy train set plus clean
/// validation and test sets.
#[pyclass]
#[derive(Clone)]
struct Dataset {
    inner: gradtau::data::DatasetBundle,
}

#[pymethods]
impl Dataset {
    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }

    #[getter]
    fn train_len(&self) -> usize {
        self.inner.train().len()
    }

    #[getter]
    fn test_len(&self) -> usize {
        self.inner.test().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(classes={}, in_dim={}, train_len={}, test_len={})",
            self.classes(),
            self.in_dim(),
            self.train_len(),
            self.test_len()
        )
    }
}

/// Multi-layer perceptron parameters (ReLU hidden layers, softmax head).
#[pyclass]
#[derive(Clone)]
struct Model {
    inner: ModelParams,
}

#[pymethods]
impl Model {
    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    #[getter]
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    /// Per-layer `(fan_in, fan_out)` pairs.
    #[getter]
    fn shapes(&self) -> Vec<(usize, usize)> {
        self.inner.shapes().to_vec()
    }

    /// Flat copy of every weight and bias.
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// Accuracy in percent on the dataset's test rows.
    fn test_accuracy(&self, dataset: PyRef<'_, Dataset>) -> PyResult<f64> {
        let batch = dataset.inner.test().full_batch().map_err(to_py_err)?;
        report::accuracy(&self.inner, &batch).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(in_dim={}, classes={}, n_params={})",
            self.in_dim(),
            self.classes(),
            self.n_params()
        )
    }
}

/// A disjoint forget/retain partition of the train rows.
#[pyclass]
#[derive(Clone)]
struct Split {
    inner: gradtau::data::Split,
}

#[pymethods]
impl Split {
    fn forget_indices(&self) -> Vec<usize> {
        self.inner.forget_indices().to_vec()
    }

    fn retain_indices(&self) -> Vec<usize> {
        self.inner.retain_indices().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Split(forget={}, retain={})",
            self.inner.forget_indices().len(),
            self.inner.retain_indices().len()
        )
    }
}

/// Outcome of one unlearning run.
#[pyclass]
struct UnlearnResult {
    #[pyo3(get)]
    method: String,
    /// The unlearned parameters.
    #[pyo3(get)]
    model: Py<Model>,
    /// Resolved initial ascent weight (adaptive method only).
    #[pyo3(get)]
    alpha0: Option<f64>,
    #[pyo3(get)]
    steps_taken: usize,
    /// Divergence reason, or None for a clean run.
    #[pyo3(get)]
    failure: Option<String>,
    trace_json_text: String,
}

#[pymethods]
impl UnlearnResult {
    /// The per-epoch run trace as a JSON array (adaptive method), or the
    /// per-pass mean losses (baselines).
    fn trace_json(&self) -> String {
        self.trace_json_text.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "UnlearnResult(method='{}', steps_taken={}, failure={:?})",
            self.method, self.steps_taken, self.failure
        )
    }
}

/// Generate a seeded synthetic task: Gaussian class clusters on the unit
/// sphere with a fraction of train labels reassigned.
#[pyfunction]
#[pyo3(signature = (
    seed,
    classes = 5,
    in_dim = 20,
    train_per_class = 200,
    validation_per_class = 50,
    test_per_class = 200,
    cluster_spread = 0.65,
    label_noise_fraction = 0.15,
))]
#[allow(clippy::too_many_arguments)]
fn generate(
    seed: u64,
    classes: usize,
    in_dim: usize,
    train_per_class: usize,
    validation_per_class: usize,
    test_per_class: usize,
    cluster_spread: f64,
    label_noise_fraction: f64,
) -> PyResult<Dataset> {
    let spec = SyntheticSpec {
        classes,
        in_dim,
        train_per_class,
        validation_per_class,
        test_per_class,
        cluster_spread,
        label_noise_fraction,
    };
    let inner = generate_synthetic(&spec, seed).map_err(to_py_err)?;
    Ok(Dataset { inner })
}

/// Train a fresh classifier on the full train set.
#[pyfunction]
#[pyo3(signature = (dataset, hidden = vec![32], seed = 0, epochs = 60))]
fn pretrain(
    dataset: PyRef<'_, Dataset>,
    hidden: Vec<usize>,
    seed: u64,
    epochs: usize,
) -> PyResult<Model> {
    let cfg = FitConfig {
        epochs,
        ..FitConfig::default()
    };
    let fit = gradtau::baselines::pretrain(&dataset.inner, &hidden, &cfg, seed).map_err(to_py_err)?;
    if let Some(reason) = fit.failure {
        return Err(PyRuntimeError::new_err(format!("pretraining failed: {reason}")));
    }
    Ok(Model { inner: fit.params })
}

/// Choose the forget set: either a random `fraction` of the train rows or
/// every row of `forget_class` (exactly one of the two must be given).
#[pyfunction]
#[pyo3(signature = (dataset, seed = 0, fraction = None, forget_class = None))]
fn split(
    dataset: PyRef<'_, Dataset>,
    seed: u64,
    fraction: Option<f64>,
    forget_class: Option<usize>,
) -> PyResult<Split> {
    let spec = match (fraction, forget_class) {
        (Some(fraction), None) => SplitSpec::RandomSubset { fraction },
        (None, Some(class)) => SplitSpec::ClassRemoval { class },
        _ => {
            return Err(PyValueError::new_err(
                "pass exactly one of `fraction` and `forget_class`",
            ))
        }
    };
    let inner = make_split(&dataset.inner, &spec, seed).map_err(to_py_err)?;
    Ok(Split { inner })
}

/// Hidden widths implied by a model's layer shapes.
fn hidden_of(model: &ModelParams) -> Vec<usize> {
    let shapes = model.shapes();
    shapes[..shapes.len() - 1].iter().map(|&(_, out)| out).collect()
}

/// Run one unlearning method against a pretrained model. `method` is one
/// of: original, retrain, finetune, label_swap, nabla_tau. `alpha` sets
/// the initial ascent weight of the adaptive method; when omitted it is
/// derived from the realized forget fraction. `batch_size` must not
/// exceed the smaller side of the split.
#[pyfunction]
#[pyo3(signature = (method, model, dataset, split, seed = 0, alpha = None, batch_size = None))]
fn unlearn(
    py: Python<'_>,
    method: &str,
    model: PyRef<'_, Model>,
    dataset: PyRef<'_, Dataset>,
    split: PyRef<'_, Split>,
    seed: u64,
    alpha: Option<f64>,
    batch_size: Option<usize>,
) -> PyResult<UnlearnResult> {
    let method: Method = method.parse().map_err(to_py_err)?;
    let mut cfg = ExperimentConfig::default();
    cfg.model.hidden = hidden_of(&model.inner);
    if alpha.is_some() {
        cfg.unlearn.alpha0 = alpha;
    }
    if let Some(batch) = batch_size {
        cfg.unlearn.batch_size = batch;
        cfg.pretrain.batch_size = batch;
    }
    let run = report::run_method(method, &model.inner, &dataset.inner, &split.inner, &cfg, seed)
        .map_err(to_py_err)?;
    let trace_json_text = if run.trace.is_empty() {
        serde_json::to_string(&run.epoch_losses)
    } else {
        serde_json::to_string(&run.trace)
    }
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(UnlearnResult {
        method: run.method.to_string(),
        model: Py::new(py, Model { inner: run.params })?,
        alpha0: run.alpha0,
        steps_taken: run.steps_taken,
        failure: run.failure,
        trace_json_text,
    })
}

/// Evaluate a model under a split: accuracies plus both membership
/// attacks. Returns a dict with keys a_dr, a_df, a_dt, acc_gap, mia_l,
/// mia_e, gap_l, gap_e.
#[pyfunction]
#[pyo3(signature = (model, dataset, split, seed = 0))]
fn evaluate<'py>(
    py: Python<'py>,
    model: PyRef<'py, Model>,
    dataset: PyRef<'py, Dataset>,
    split: PyRef<'py, Split>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::default();
    let eval = report::evaluate(&model.inner, &dataset.inner, &split.inner, &cfg.attack, seed)
        .map_err(to_py_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("a_dr", eval.a_dr)?;
    out.set_item("a_df", eval.a_df)?;
    out.set_item("a_dt", eval.a_dt)?;
    out.set_item("acc_gap", eval.acc_gap)?;
    out.set_item("mia_l", eval.attack.mia_l)?;
    out.set_item("mia_e", eval.attack.mia_e)?;
    out.set_item("gap_l", eval.attack.gap_l)?;
    out.set_item("gap_e", eval.attack.gap_e)?;
    Ok(out)
}

/// Initial ascent weight suggested for a forget fraction (5/3 rule,
/// clamped to 1).
#[pyfunction]
fn default_alpha(fraction: f64) -> f64 {
    gradtau::unlearn::default_alpha(fraction)
}

/// Shannon entropy (nats) of a probability distribution.
#[pyfunction]
fn entropy(probs: Vec<f64>) -> PyResult<f64> {
    entropy_of(&probs).map_err(to_py_err)
}

#[pymodule]
fn gradtau_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Split>()?;
    m.add_class::<UnlearnResult>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(unlearn, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(default_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    Ok(())
}
