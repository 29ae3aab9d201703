//! Gradient flow of a graph toward a target under the FUGW loss.
//!
//! The derivative of the transport loss with respect to the moving graph is
//! taken at a fixed plan, as for the optimal value of any minimization
//! (the envelope theorem). At `alpha = 1` only the structure term remains,
//! so the features receive an exactly zero gradient and never move.

use super::{AppError, Result};
use crate::autodiff::Tape;
use crate::fugw::{fugw_loss_var, FugwParams, GraphVars};
use crate::graph::{hop_distances, Graph};
use crate::model::{predict_plan, ModelWeights};
use crate::solvers::{solve_fugw, SolverConfig};
use crate::tensor::Tensor;

/// Where the plan at each step comes from.
#[derive(Debug, Clone, Copy)]
pub enum PlanSource<'a> {
    Model(&'a ModelWeights),
    Solver(&'a SolverConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Pairs at distance at most this after a step become edges.
    pub threshold: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            // gradients scale with products of node weights, about 1/n^2
            step_size: 20.0,
            threshold: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStep {
    pub step: usize,
    pub graph: Graph,
    /// Loss of this graph against the target at its own plan.
    pub loss: f64,
    pub edges: usize,
    /// The rebuilt adjacency had several components; unreachable pairs got
    /// distance `n`.
    pub disconnected: bool,
}

struct Evaluated {
    loss: f64,
    grad_features: Tensor,
    grad_connectivity: Tensor,
}

fn evaluate(g: &Graph, target: &Graph, params: &FugwParams, source: PlanSource<'_>) -> Result<Evaluated> {
    let plan = match source {
        PlanSource::Model(w) => predict_plan(g, target, params.alpha, params.rho, w)?.into_plan(),
        PlanSource::Solver(cfg) => solve_fugw(g, target, params, cfg, None)?.plan.into_plan(),
    };
    let tape = Tape::new();
    let moving = GraphVars {
        features: tape.param(g.features().clone()),
        connectivity: tape.param(g.connectivity().clone()),
        weights: tape.constant(Tensor::column(g.weights())),
    };
    let fixed = GraphVars::constant(&tape, target);
    let loss = fugw_loss_var(&moving, &fixed, tape.constant(plan), params.alpha, params.rho)?;
    let grads = tape.backward(loss)?;
    Ok(Evaluated {
        loss: loss.item(),
        grad_features: grads.wrt(moving.features),
        grad_connectivity: grads.wrt(moving.connectivity),
    })
}

/// One descent step: move features and distances against the gradient,
/// symmetrize the distances and clear their diagonal, threshold them into a
/// new adjacency and recompute hop distances from it.
fn step(g: &Graph, eval: &Evaluated, config: &FlowConfig) -> Result<(Graph, bool)> {
    let n = g.n();
    let mut features = g.features().clone();
    features.axpy(-config.step_size, &eval.grad_features)?;
    let mut moved = g.connectivity().clone();
    moved.axpy(-config.step_size, &eval.grad_connectivity)?;
    let adjacency = Tensor::from_fn(n, n, |i, j| {
        let d = 0.5 * (moved.get(i, j) + moved.get(j, i));
        f64::from(u8::from(i != j && d <= config.threshold))
    });
    let (connectivity, disconnected) = hop_distances(&adjacency, 0.0);
    let graph = Graph::from_parts(
        features,
        adjacency,
        connectivity,
        g.weights().to_vec(),
        g.labels().map(<[usize]>::to_vec),
    )?;
    Ok((graph, disconnected))
}

/// Runs `config.steps` descent steps from `start` toward `target`. The
/// trajectory holds the start and every graph after it, each with its loss.
pub fn graph_flow(
    start: &Graph,
    target: &Graph,
    params: &FugwParams,
    source: PlanSource<'_>,
    config: &FlowConfig,
) -> Result<Vec<FlowStep>> {
    params.validate()?;
    if !(config.step_size >= 0.0 && config.step_size.is_finite()) {
        return Err(AppError::Input(format!("step size must be finite and >= 0, got {}", config.step_size)));
    }
    if start.dim() != target.dim() {
        return Err(AppError::Input(format!(
            "feature dimensions differ: {} vs {}",
            start.dim(),
            target.dim()
        )));
    }
    let mut current = start.clone();
    let mut eval = evaluate(&current, target, params, source)?;
    let mut out = vec![FlowStep {
        step: 0,
        edges: current.edges().len(),
        graph: current.clone(),
        loss: eval.loss,
        disconnected: false,
    }];
    for k in 1..=config.steps {
        let (next, disconnected) = step(&current, &eval, config)?;
        current = next;
        eval = evaluate(&current, target, params, source)?;
        out.push(FlowStep {
            step: k,
            edges: current.edges().len(),
            graph: current.clone(),
            loss: eval.loss,
            disconnected,
        });
    }
    Ok(out)
}
