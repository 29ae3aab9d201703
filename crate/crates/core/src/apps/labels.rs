//! Barycentric transport of labels and features, and `(alpha, rho)` tuning
//! against observed target labels.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AppError, Result};
use crate::autodiff::{Tape, Var};
use crate::graph::Graph;
use crate::model::{clamp_rho, predict_plan, predict_plan_var, GraphInput, ModelWeights, WeightVars, RHO_RANGE};
use crate::tensor::Tensor;

/// Target nodes whose incoming mass is below this are unmatched.
pub const UNMATCHED_MASS: f64 = 1e-12;

/// Barycentric projection `diag(1 / P^T 1) P^T X` of source rows `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transported {
    /// `n2 x d`; unmatched rows are zero.
    pub values: Tensor,
    pub unmatched: Vec<bool>,
}

impl Transported {
    /// True when every target node is unmatched.
    pub fn degenerate(&self) -> bool {
        self.unmatched.iter().all(|&u| u)
    }
}

/// Each target row is the plan-weighted average of the source rows it
/// receives mass from.
pub fn transport_features(plan: &Tensor, source: &Tensor) -> Result<Transported> {
    if plan.rows() != source.rows() {
        return Err(AppError::Input(format!(
            "plan has {} rows but the source has {} nodes",
            plan.rows(),
            source.rows()
        )));
    }
    let incoming = plan.col_sums();
    let mut values = plan.matmul_tn(source)?;
    let unmatched: Vec<bool> = incoming.iter().map(|&m| !(m >= UNMATCHED_MASS)).collect();
    for (j, &m) in incoming.iter().enumerate() {
        let row = values.row_mut(j);
        if unmatched[j] {
            row.fill(0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= m);
        }
    }
    Ok(Transported { values, unmatched })
}

/// Class probabilities on the target graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPropResult {
    /// Label value of each probability column, sorted.
    pub classes: Vec<usize>,
    /// `n2 x classes.len()`; rows of matched nodes sum to one.
    pub probabilities: Tensor,
    pub unmatched: Vec<bool>,
    pub degenerate: bool,
}

/// Accuracy summary over a set of scored target nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    /// Fraction of matched scored nodes whose argmax class is right; NaN
    /// when no scored node is matched.
    pub accuracy: f64,
    pub n_unmatched: usize,
    pub per_class_accuracy: BTreeMap<usize, f64>,
}

impl LabelPropResult {
    /// Argmax label per target node, `None` when unmatched. Ties go to the
    /// smaller label.
    pub fn predicted(&self) -> Vec<Option<usize>> {
        (0..self.probabilities.rows())
            .map(|j| {
                if self.unmatched[j] {
                    return None;
                }
                let row = self.probabilities.row(j);
                let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                Some(self.classes[best])
            })
            .collect()
    }

    /// Scores the nodes in `scored` against `truth`. Unmatched nodes are
    /// counted separately and left out of the accuracies.
    pub fn score(&self, truth: &[usize], scored: &[usize]) -> Result<LabelReport> {
        if truth.len() != self.unmatched.len() {
            return Err(AppError::Input(format!(
                "{} target labels for {} target nodes",
                truth.len(),
                self.unmatched.len()
            )));
        }
        let predicted = self.predicted();
        let mut n_unmatched = 0;
        let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for &j in scored {
            let Some(&label) = truth.get(j) else {
                return Err(AppError::Input(format!("scored node {j} out of range")));
            };
            match predicted[j] {
                None => n_unmatched += 1,
                Some(p) => {
                    let e = per_class.entry(label).or_default();
                    e.0 += usize::from(p == label);
                    e.1 += 1;
                }
            }
        }
        let (right, total) = per_class.values().fold((0, 0), |(r, t), &(a, b)| (r + a, t + b));
        Ok(LabelReport {
            accuracy: if total == 0 { f64::NAN } else { right as f64 / total as f64 },
            n_unmatched,
            per_class_accuracy: per_class
                .into_iter()
                .map(|(k, (r, t))| (k, r as f64 / t as f64))
                .collect(),
        })
    }
}

fn one_hot(labels: &[usize], classes: &[usize]) -> Tensor {
    Tensor::from_fn(labels.len(), classes.len(), |i, k| f64::from(u8::from(labels[i] == classes[k])))
}

fn sorted_classes(labels: &[usize]) -> Vec<usize> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Moves one-hot source labels through the plan. Columns follow the sorted
/// distinct source labels, so a target class absent from the source can
/// never be predicted.
pub fn propagate_labels(plan: &Tensor, source_labels: &[usize]) -> Result<LabelPropResult> {
    if source_labels.len() != plan.rows() {
        return Err(AppError::Input(format!(
            "{} source labels for a plan with {} rows",
            source_labels.len(),
            plan.rows()
        )));
    }
    let classes = sorted_classes(source_labels);
    let moved = transport_features(plan, &one_hot(source_labels, &classes))?;
    let degenerate = moved.degenerate();
    Ok(LabelPropResult {
        classes,
        probabilities: moved.values,
        unmatched: moved.unmatched,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub steps: usize,
    /// Step size in `(logit alpha, ln rho)` coordinates.
    pub step_size: f64,
    /// Halve the step until the objective does not increase.
    pub backtracking: bool,
    pub max_halvings: usize,
    /// Objective reported when no observed node receives mass.
    pub degenerate_penalty: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.05,
            backtracking: true,
            max_halvings: 10,
            degenerate_penalty: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneStep {
    pub step: usize,
    pub alpha: f64,
    pub rho: f64,
    pub objective: f64,
}

/// Probabilities are floored by this inside the log so that a class missing
/// from the source costs a large but finite amount.
const PROB_FLOOR: f64 = 1e-10;
const LOGIT_BOUND: f64 = 20.0;

fn logit(alpha: f64) -> f64 {
    (alpha / (1.0 - alpha)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LabelObjective<'a> {
    weights: &'a ModelWeights,
    g1: &'a Graph,
    g2: &'a Graph,
    source: Tensor,
    /// `n2 x classes` with a one at each observed node's class.
    observed: Tensor,
    observed_nodes: Vec<usize>,
    n_observed: usize,
    penalty: f64,
}

impl<'a> LabelObjective<'a> {
    fn new(
        weights: &'a ModelWeights,
        g1: &'a Graph,
        g2: &'a Graph,
        observed: &[usize],
        penalty: f64,
    ) -> Result<Self> {
        let (Some(l1), Some(l2)) = (g1.labels(), g2.labels()) else {
            return Err(AppError::Input("both graphs need node labels".into()));
        };
        if observed.is_empty() || observed.iter().any(|&j| j >= g2.n()) {
            return Err(AppError::Input("observed nodes must be a non-empty subset of the target".into()));
        }
        let classes = sorted_classes(l1);
        let mut mask = Tensor::zeros(g2.n(), classes.len());
        for &j in observed {
            if let Ok(k) = classes.binary_search(&l2[j]) {
                mask.set(j, k, 1.0);
            }
        }
        Ok(Self {
            weights,
            g1,
            g2,
            source: one_hot(l1, &classes),
            observed: mask,
            observed_nodes: observed.to_vec(),
            n_observed: observed.len(),
            penalty,
        })
    }

    /// Objective and gradient in `(logit alpha, ln rho)`.
    fn evaluate(&self, theta: [f64; 2], with_grad: bool) -> Result<(f64, [f64; 2])> {
        let tape = Tape::new();
        let ta = tape.param(Tensor::scalar(theta[0]));
        let tr = tape.param(Tensor::scalar(theta[1]));
        let wv = WeightVars::constants(&tape, self.weights);
        let (i1, i2) = (GraphInput::constant(&tape, self.g1), GraphInput::constant(&tape, self.g2));
        let plan = predict_plan_var(&wv, &i1, &i2, ta.sigmoid(), tr.exp())?.plan;
        let incoming = plan.col_sums();
        if self.observed_mass_missing(incoming.value().row(0)) {
            return Ok((self.penalty, [0.0, 0.0]));
        }
        let value = self.cross_entropy(&tape, plan, incoming)?;
        let v = value.item();
        if !v.is_finite() {
            return Ok((self.penalty, [0.0, 0.0]));
        }
        if !with_grad {
            return Ok((v, [0.0, 0.0]));
        }
        let grads = tape.backward(value)?;
        Ok((v, [grads.wrt(ta).item(), grads.wrt(tr).item()]))
    }

    fn observed_mass_missing(&self, incoming: &[f64]) -> bool {
        self.observed_nodes.iter().all(|&j| !(incoming[j] >= UNMATCHED_MASS))
    }

    fn cross_entropy<'t>(&self, tape: &'t Tape, plan: Var<'t>, incoming: Var<'t>) -> Result<Var<'t>> {
        let moved = plan.t().matmul(tape.constant(self.source.clone()))?;
        let probs = moved.div(incoming.t().offset(f64::MIN_POSITIVE))?;
        let log_probs = probs.offset(PROB_FLOOR).ln();
        let picked = log_probs.inner(tape.constant(self.observed.clone()))?;
        let missing = self.n_observed as f64 - self.observed.sum();
        // a class the source lacks contributes -ln(floor)
        Ok(picked.neg().offset(-missing * PROB_FLOOR.ln()).scale(1.0 / self.n_observed as f64))
    }
}

/// Gradient descent on the mean cross-entropy of the observed target labels
/// under the propagated class probabilities, which is the KL divergence from
/// their one-hot encodings. `alpha` moves through a logit and `rho` through
/// its logarithm, kept inside the range the predictor accepts. The returned
/// trajectory starts at the initial point; with backtracking, a step that
/// cannot be made non-increasing ends the descent.
pub fn tune_params(
    g1: &Graph,
    g2: &Graph,
    observed: &[usize],
    weights: &ModelWeights,
    init: (f64, f64),
    config: &TuneConfig,
) -> Result<Vec<TuneStep>> {
    let (alpha0, rho0) = init;
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(AppError::Input(format!("initial alpha must lie in (0, 1), got {alpha0}")));
    }
    if !(rho0 > 0.0 && rho0.is_finite()) {
        return Err(AppError::Input(format!("initial rho must be positive, got {rho0}")));
    }
    let objective = LabelObjective::new(weights, g1, g2, observed, config.degenerate_penalty)?;
    let bounds = (RHO_RANGE.0.ln(), RHO_RANGE.1.ln());
    let project = |t: [f64; 2]| [t[0].clamp(-LOGIT_BOUND, LOGIT_BOUND), t[1].clamp(bounds.0, bounds.1)];
    let mut theta = project([logit(alpha0), clamp_rho(rho0).ln()]);
    let (mut value, mut grad) = objective.evaluate(theta, true)?;
    let record = |step, theta: [f64; 2], objective| TuneStep {
        step,
        alpha: sigmoid(theta[0]),
        rho: theta[1].exp(),
        objective,
    };
    // the first entry reports the caller's values exactly
    let mut trajectory = vec![TuneStep {
        step: 0,
        alpha: alpha0,
        rho: rho0,
        objective: value,
    }];
    for step in 1..=config.steps {
        let mut eta = config.step_size;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial = project([theta[0] - eta * grad[0], theta[1] - eta * grad[1]]);
            let (v, g) = objective.evaluate(trial, true)?;
            if !config.backtracking || v <= value {
                accepted = Some((trial, v, g));
                break;
            }
            eta *= 0.5;
        }
        let Some((trial, v, g)) = accepted else {
            break;
        };
        (theta, value, grad) = (trial, v, g);
        trajectory.push(record(step, theta, value));
    }
    Ok(trajectory)
}

/// Objective and its gradient in `(logit alpha, ln rho)` at one point, for
/// checking the tuner against finite differences.
pub fn tune_objective(
    g1: &Graph,
    g2: &Graph,
    observed: &[usize],
    weights: &ModelWeights,
    theta: [f64; 2],
) -> Result<(f64, [f64; 2])> {
    LabelObjective::new(weights, g1, g2, observed, TuneConfig::default().degenerate_penalty)?.evaluate(theta, true)
}

/// Outcome of tuning on half of the target labels and scoring the rest.
#[derive(Debug, Clone)]
pub struct TunedTransfer {
    pub trajectory: Vec<TuneStep>,
    pub observed: Vec<usize>,
    pub held_out: Vec<usize>,
    pub result: LabelPropResult,
    pub report: LabelReport,
}

/// Splits the target nodes at random into observed and held-out halves
/// (observed gets the extra node when `n2` is odd), tunes `(alpha, rho)` on
/// the observed labels, then propagates at the tuned values and scores the
/// held-out nodes.
pub fn tune_and_score(
    g1: &Graph,
    g2: &Graph,
    weights: &ModelWeights,
    init: (f64, f64),
    config: &TuneConfig,
    seed: u64,
) -> Result<TunedTransfer> {
    let (Some(l1), Some(l2)) = (g1.labels(), g2.labels()) else {
        return Err(AppError::Input("both graphs need node labels".into()));
    };
    let mut nodes: Vec<usize> = (0..g2.n()).collect();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let split = g2.n().div_ceil(2);
    let (mut observed, mut held_out) = (nodes[..split].to_vec(), nodes[split..].to_vec());
    observed.sort_unstable();
    held_out.sort_unstable();
    let trajectory = tune_params(g1, g2, &observed, weights, init, config)?;
    let last = trajectory.last().copied().expect("trajectory holds the initial point");
    let plan = predict_plan(g1, g2, last.alpha, last.rho, weights)?;
    let result = propagate_labels(plan.plan(), l1)?;
    let report = result.score(l2, &held_out)?;
    Ok(TunedTransfer {
        trajectory,
        observed,
        held_out,
        result,
        report,
    })
}
