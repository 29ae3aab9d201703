//! Python bindings. Matrices cross the boundary as lists of rows, so they
//! convert directly to and from `numpy.array`.

use std::str::FromStr;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ulot::apps::{mds_embed_with, propagate_labels as propagate, similarity_matrix as similarity, Dissimilarity};
use ulot::fugw::{fugw_loss as loss, FugwParams};
use ulot::graph::{self, sbm_generate, SbmConfig};
use ulot::model::{self, predict_plan};
use ulot::solvers::{self, SolverConfig, SolverKind};
use ulot::tensor::Tensor;
use ulot::train::{self, PairDataset};

create_exception!(ulot, SolverError, PyException, "A classical solver failed.");
create_exception!(ulot, ModelError, PyException, "Weights or predictor inputs are invalid.");

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn solver_error(e: solvers::SolverError) -> PyErr {
    SolverError::new_err(e.to_string())
}

fn model_error(e: model::ModelError) -> PyErr {
    ModelError::new_err(e.to_string())
}

fn tensor(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(value_error)
}

fn params(alpha: f64, rho: f64) -> PyResult<FugwParams> {
    FugwParams::new(alpha, rho).map_err(value_error)
}

/// An attributed graph with node features, hop-count connectivity and
/// uniform node weights.
#[pyclass(name = "Graph", module = "ulot", frozen)]
pub struct PyGraph {
    inner: graph::Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (features, edges, labels = None))]
    fn new(features: Vec<Vec<f64>>, edges: Vec<(usize, usize)>, labels: Option<Vec<usize>>) -> PyResult<Self> {
        let inner = graph::Graph::from_edges(tensor(&features)?, &edges, labels).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Draws a stochastic block model graph with the given clusters.
    #[staticmethod]
    #[pyo3(signature = (clusters = vec![1, 2, 3], nodes_min = 20, nodes_max = 40, seed = 0))]
    fn sbm(clusters: Vec<usize>, nodes_min: usize, nodes_max: usize, seed: u64) -> PyResult<Self> {
        let config = SbmConfig::with_clusters(&clusters).with_nodes(nodes_min, nodes_max);
        let inner = sbm_generate(&config, seed).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = graph::load_graph(path).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = graph::parse_graph(text).map_err(value_error)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        graph::save_graph(&self.inner, path).map_err(value_error)
    }

    fn to_json(&self) -> String {
        graph::to_json_string(&self.inner)
    }

    /// The graph with node `k` taken from node `order[k]`.
    fn permuted(&self, order: Vec<usize>) -> PyResult<Self> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.inner.n()).collect::<Vec<_>>() {
            return Err(value_error("order must be a permutation of the nodes"));
        }
        Ok(Self {
            inner: self.inner.permuted(&order),
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().to_rows()
    }

    #[getter]
    fn adjacency(&self) -> Vec<Vec<f64>> {
        self.inner.adjacency().to_rows()
    }

    #[getter]
    fn connectivity(&self) -> Vec<Vec<f64>> {
        self.inner.connectivity().to_rows()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels().map(<[usize]>::to_vec)
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={})", self.inner.n(), self.inner.edges().len())
    }
}

/// Outcome of a classical solve.
#[pyclass(name = "SolveResult", module = "ulot", frozen, get_all)]
pub struct PySolveResult {
    plan: Vec<Vec<f64>>,
    loss: f64,
    loss_trace: Vec<f64>,
    iterations: usize,
    mass: f64,
    converged: bool,
    stop: String,
    time_ms: f64,
    epsilon: Option<f64>,
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(loss={}, iterations={}, mass={}, stop={})",
            self.loss, self.iterations, self.mass, self.stop
        )
    }
}

/// Minimizes the FUGW loss with one of `mm`, `ibpp`, `sinkhorn`, `boxqn`.
#[pyfunction]
#[pyo3(signature = (
    g1, g2, alpha, rho, solver = "mm", *, epsilon = None, max_outer = 200, max_inner = 100,
    outer_tol = 1e-7, inner_tol = 1e-9, init = None
))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    g1: &PyGraph,
    g2: &PyGraph,
    alpha: f64,
    rho: f64,
    solver: &str,
    epsilon: Option<f64>,
    max_outer: usize,
    max_inner: usize,
    outer_tol: f64,
    inner_tol: f64,
    init: Option<Vec<Vec<f64>>>,
) -> PyResult<PySolveResult> {
    let config = SolverConfig {
        kind: SolverKind::from_str(solver).map_err(value_error)?,
        epsilon,
        max_outer,
        max_inner,
        outer_tol,
        inner_tol,
        ..SolverConfig::default()
    };
    let p = params(alpha, rho)?;
    let init = init.as_deref().map(tensor).transpose()?;
    let (a, b) = (&g1.inner, &g2.inner);
    let r = py
        .detach(|| solvers::solve_fugw(a, b, &p, &config, init.as_ref()))
        .map_err(solver_error)?;
    let stop = match r.stop {
        solvers::StopReason::Tolerance => "tolerance",
        solvers::StopReason::Stalled => "stalled",
        solvers::StopReason::ZeroMass => "zero_mass",
        solvers::StopReason::MaxIterations => "max_iterations",
    }
    .to_string();
    Ok(PySolveResult {
        loss: r.loss(),
        iterations: r.iters(),
        mass: r.plan.mass(),
        converged: r.converged,
        stop,
        time_ms: r.time_ms,
        epsilon: r.epsilon,
        plan: r.plan.plan().to_rows(),
        loss_trace: r.loss_trace,
    })
}

/// FUGW loss of a plan between two graphs.
#[pyfunction]
fn fugw_loss(g1: &PyGraph, g2: &PyGraph, plan: Vec<Vec<f64>>, alpha: f64, rho: f64) -> PyResult<f64> {
    loss(&g1.inner, &g2.inner, &tensor(&plan)?, &params(alpha, rho)?).map_err(value_error)
}

/// Architecture of the plan predictor.
#[pyclass(name = "ModelConfig", module = "ulot", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyModelConfig {
    layers: usize,
    alpha_dim: usize,
    embed_dim: usize,
    mlp_hidden: usize,
    gcn_hidden: usize,
    temperature: f64,
    input_dim: usize,
}

impl From<&PyModelConfig> for model::ModelConfig {
    fn from(c: &PyModelConfig) -> Self {
        Self {
            layers: c.layers,
            alpha_dim: c.alpha_dim,
            embed_dim: c.embed_dim,
            mlp_hidden: c.mlp_hidden,
            gcn_hidden: c.gcn_hidden,
            temperature: c.temperature,
            input_dim: c.input_dim,
        }
    }
}

impl From<&model::ModelConfig> for PyModelConfig {
    fn from(c: &model::ModelConfig) -> Self {
        Self {
            layers: c.layers,
            alpha_dim: c.alpha_dim,
            embed_dim: c.embed_dim,
            mlp_hidden: c.mlp_hidden,
            gcn_hidden: c.gcn_hidden,
            temperature: c.temperature,
            input_dim: c.input_dim,
        }
    }
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut c = Self::from(&model::ModelConfig::default());
        if let Some(kwargs) = kwargs {
            for (key, value) in kwargs.iter() {
                let key: String = key.extract()?;
                match key.as_str() {
                    "layers" => c.layers = value.extract()?,
                    "alpha_dim" => c.alpha_dim = value.extract()?,
                    "embed_dim" => c.embed_dim = value.extract()?,
                    "mlp_hidden" => c.mlp_hidden = value.extract()?,
                    "gcn_hidden" => c.gcn_hidden = value.extract()?,
                    "temperature" => c.temperature = value.extract()?,
                    "input_dim" => c.input_dim = value.extract()?,
                    other => return Err(value_error(format!("unknown model option {other:?}"))),
                }
            }
        }
        model::ModelConfig::from(&c).validate().map_err(model_error)?;
        Ok(c)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(layers={}, alpha_dim={}, embed_dim={}, mlp_hidden={}, gcn_hidden={}, temperature={}, input_dim={})",
            self.layers, self.alpha_dim, self.embed_dim, self.mlp_hidden, self.gcn_hidden, self.temperature, self.input_dim
        )
    }
}

/// Weights of the plan predictor.
#[pyclass(name = "Weights", module = "ulot", frozen)]
pub struct PyWeights {
    inner: model::ModelWeights,
}

#[pymethods]
impl PyWeights {
    /// Freshly initialized weights.
    #[staticmethod]
    #[pyo3(signature = (config = None, seed = 0))]
    fn init(config: Option<&PyModelConfig>, seed: u64) -> PyResult<Self> {
        let config = config.map(model::ModelConfig::from).unwrap_or_default();
        let inner = model::ModelWeights::init(&config, seed).map_err(model_error)?;
        Ok(Self { inner })
    }

    /// Loads weights, checking the architecture when `config` is given.
    #[staticmethod]
    #[pyo3(signature = (path, config = None))]
    fn load(path: &str, config: Option<&PyModelConfig>) -> PyResult<Self> {
        let expected = config.map(model::ModelConfig::from);
        let inner = model::load_weights(path, expected.as_ref()).map_err(model_error)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_weights(&self.inner, path).map_err(model_error)
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig::from(self.inner.config())
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_scalars()
    }

    /// Predicted transport plan, `g1.n` rows by `g2.n` columns.
    fn predict(&self, py: Python<'_>, g1: &PyGraph, g2: &PyGraph, alpha: f64, rho: f64) -> PyResult<Vec<Vec<f64>>> {
        let (a, b, w) = (&g1.inner, &g2.inner, &self.inner);
        let plan = py.detach(|| predict_plan(a, b, alpha, rho, w)).map_err(model_error)?;
        Ok(plan.plan().to_rows())
    }

    /// FUGW loss of the predicted plan.
    fn predict_loss(&self, py: Python<'_>, g1: &PyGraph, g2: &PyGraph, alpha: f64, rho: f64) -> PyResult<f64> {
        let (a, b, w) = (&g1.inner, &g2.inner, &self.inner);
        py.detach(|| train::pair_loss(w, a, b, alpha, rho)).map_err(|e| ModelError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Weights({}, parameters={})", self.config().__repr__(), self.inner.num_scalars())
    }
}

/// Trains the predictor on `pairs` random pairs of `graphs` with sampled
/// `(alpha, rho)`. Returns the best-validation weights and one dict of
/// metrics per epoch, starting with the untrained model.
#[pyfunction]
#[pyo3(signature = (
    graphs, pairs = 2000, *, model = None, epochs = 10, learning_rate = 1e-3, batch_size = 256,
    val_fraction = 0.2, seed = 0, pair_seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train_model<'py>(
    py: Python<'py>,
    graphs: Vec<PyRef<'py, PyGraph>>,
    pairs: usize,
    model: Option<&PyModelConfig>,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    val_fraction: f64,
    seed: u64,
    pair_seed: u64,
) -> PyResult<(PyWeights, Vec<Bound<'py, PyDict>>)> {
    if graphs.len() < 2 {
        return Err(value_error("need at least two graphs"));
    }
    let graphs: Vec<graph::Graph> = graphs.iter().map(|g| g.inner.clone()).collect();
    let corpus = graph::Dataset {
        kinds: vec![String::new(); graphs.len()],
        seeds: vec![0; graphs.len()],
        configs: Vec::new(),
        seed: pair_seed,
        graphs,
    };
    let samples = corpus.random_pairs(pairs, pair_seed);
    let data = PairDataset::new(corpus.graphs, samples).map_err(value_error)?;
    let model = model.map(model::ModelConfig::from).unwrap_or_default();
    let config = train::TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        val_fraction,
        seed,
        ..train::TrainConfig::default()
    };
    let outcome = py
        .detach(|| train::train(&data, &model, &config, &mut |_| {}))
        .map_err(|e| match e {
            train::TrainError::Model(m) => model_error(m),
            other => value_error(other),
        })?;
    let history = outcome
        .metrics
        .epochs
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("epoch", m.epoch)?;
            d.set_item("train_loss", m.train_loss)?;
            d.set_item("val_loss", m.val_loss)?;
            d.set_item("time_s", m.time_s)?;
            d.set_item("skipped_batches", m.skipped_batches)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyWeights { inner: outcome.best }, history))
}

/// Pushes one-hot source labels through a plan. Returns the predicted
/// label of each target node (`None` when it receives no mass), the sorted
/// class values and the class probabilities.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn propagate_labels(
    plan: Vec<Vec<f64>>,
    source_labels: Vec<usize>,
) -> PyResult<(Vec<Option<usize>>, Vec<usize>, Vec<Vec<f64>>)> {
    let r = propagate(&tensor(&plan)?, &source_labels).map_err(value_error)?;
    Ok((r.predicted(), r.classes.clone(), r.probabilities.to_rows()))
}

/// Symmetrized predicted plan mass between every pair of graphs.
#[pyfunction]
fn similarity_matrix(
    py: Python<'_>,
    graphs: Vec<PyRef<'_, PyGraph>>,
    weights: &PyWeights,
    alpha: f64,
    rho: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let graphs: Vec<graph::Graph> = graphs.iter().map(|g| g.inner.clone()).collect();
    let w = &weights.inner;
    let s = py.detach(|| similarity(&graphs, w, alpha, rho)).map_err(value_error)?;
    Ok(s.to_rows())
}

/// Classical MDS of a similarity matrix. `dissimilarity` is one of
/// `one-minus`, `sqrt-one-minus` and `neg-log`.
#[pyfunction]
#[pyo3(signature = (similarity, dim = 2, dissimilarity = "one-minus"))]
fn mds(similarity: Vec<Vec<f64>>, dim: usize, dissimilarity: &str) -> PyResult<Vec<Vec<f64>>> {
    let transform = match dissimilarity {
        "one-minus" => Dissimilarity::OneMinus,
        "sqrt-one-minus" => Dissimilarity::SqrtOneMinus,
        "neg-log" => Dissimilarity::NegLog,
        other => return Err(value_error(format!("unknown dissimilarity {other:?}"))),
    };
    let e = mds_embed_with(&tensor(&similarity)?, dim, transform).map_err(value_error)?;
    Ok(e.coords.to_rows())
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PySolveResult>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyWeights>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(fugw_loss, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(propagate_labels, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(mds, m)?)?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add("ModelError", m.py().get_type::<ModelError>())?;
    Ok(())
}

#[pymodule]
#[pyo3(name = "ulot")]
fn ulot_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
