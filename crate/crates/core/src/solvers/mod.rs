//! Classical FUGW minimization.
//!
//! The outer loop linearizes the loss at the current plan `P_t`. The
//! feature and structure terms become the cost
//! `C_t = (1 - alpha) M + 2 alpha (L (x) P_t)`, and each product-measure KL
//! term is replaced by `2 KL(P1 (x) Q1 | w (x) w)` with `Q = P_t` frozen,
//! which has the same value and gradient at `P = Q`. Through
//!
//! ```text
//! KL(a (x) c | b (x) b) = m(c) KL(a|b) + m(a) KL(c|b) + (m(a) - m(b)) (m(c) - m(b))
//! ```
//!
//! that surrogate is a plain KL-relaxed transport problem in `P`, with
//! marginal weight `2 rho m(Q)` and the constant cost shift
//! `2 rho [KL(Q1|w1) + KL(Q^T 1|w2) + 2 (m(Q) - 1)]` (weights of unit mass).
//! Any of the four inner solvers handles it. The candidate is accepted only
//! if the true loss does not increase; otherwise the step toward it is
//! halved up to ten times.

mod boxqn;
mod mm;
mod scaling;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boxqn::{inner_boxqn_uot, FLOOR as BOXQN_FLOOR};
pub use mm::{inner_mm_uot, kkt_residual};
pub use scaling::{inner_ibpp_uot, inner_sinkhorn_uot};

use crate::fugw::{kl_unnormalized, FugwError, FugwParams, FugwProblem, TransportPlan};
use crate::graph::Graph;
use crate::tensor::{Tensor, TensorError};

const MAX_HALVINGS: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-finite {quantity} at iteration {iteration}")]
    NonFinite { iteration: usize, quantity: String },
    #[error("inner objective increased at iteration {iteration}: {before} -> {after}")]
    ObjectiveIncrease { iteration: usize, before: f64, after: f64 },
    #[error("solver configuration: {0}")]
    Config(String),
    #[error("{what}: expected shape {expected:?}, got {found:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Fugw(#[from] FugwError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The KL-relaxed linear transport problem
/// `min_P <C, P> + rho KL(P1|a) + rho KL(P^T 1|b)`.
#[derive(Debug, Clone, Copy)]
pub struct InnerProblem<'a> {
    pub cost: &'a Tensor,
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub rho: f64,
}

impl InnerProblem<'_> {
    fn validate(&self) -> Result<(), SolverError> {
        let (n1, n2) = self.cost.shape();
        if self.a.len() != n1 || self.b.len() != n2 {
            return Err(SolverError::Shape {
                what: "marginal weights",
                expected: (n1, n2),
                found: (self.a.len(), self.b.len()),
            });
        }
        if !self.a.iter().chain(self.b).all(|&w| w > 0.0 && w.is_finite()) {
            return Err(SolverError::Config("marginal weights must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(SolverError::Config(format!("inner rho must be > 0, got {}", self.rho)));
        }
        if !self.cost.is_finite() {
            return Err(SolverError::NonFinite {
                iteration: 0,
                quantity: "cost matrix".into(),
            });
        }
        Ok(())
    }

    fn check_init(&self, init: &Tensor) -> Result<(), SolverError> {
        if init.shape() != self.cost.shape() {
            return Err(SolverError::Shape {
                what: "initial plan",
                expected: self.cost.shape(),
                found: init.shape(),
            });
        }
        if !init.data().iter().all(|&x| x >= 0.0 && x.is_finite()) {
            return Err(SolverError::Config("initial plan must be nonnegative and finite".into()));
        }
        Ok(())
    }
}

/// `<C, P> + rho KL(P1|a) + rho KL(P^T 1|b)`.
pub fn inner_objective(problem: &InnerProblem<'_>, plan: &Tensor) -> f64 {
    let lin: f64 = problem.cost.data().iter().zip(plan.data()).map(|(c, p)| c * p).sum();
    lin + problem.rho * (kl_unnormalized(&plan.row_sums(), problem.a) + kl_unnormalized(&plan.col_sums(), problem.b))
}

/// Output of an inner solver.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub plan: Tensor,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Mm,
    Ibpp,
    Sinkhorn,
    Boxqn,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [Self::Mm, Self::Ibpp, Self::Sinkhorn, Self::Boxqn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mm => "mm",
            Self::Ibpp => "ibpp",
            Self::Sinkhorn => "sinkhorn",
            Self::Boxqn => "boxqn",
        }
    }

    pub fn is_entropic(self) -> bool {
        matches!(self, Self::Ibpp | Self::Sinkhorn)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SolverError::Config(format!("unknown solver {s:?} (expected mm, ibpp, sinkhorn or boxqn)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Entropic strength for Sinkhorn and the proximal-point solver. `None`
    /// picks `1e-3 mean|C|` for Sinkhorn and `1e-2 max|C|` for proximal
    /// point, re-evaluated on every linearized cost.
    pub epsilon: Option<f64>,
    pub max_outer: usize,
    /// Scalings for Sinkhorn, iterations for MM and quasi-Newton, proximal
    /// steps for the proximal-point solver.
    pub max_inner: usize,
    /// Relative loss change that ends the outer loop.
    pub outer_tol: f64,
    /// Marginal change (Sinkhorn: log-scaling change, quasi-Newton:
    /// projected-gradient norm) that ends an inner solve.
    pub inner_tol: f64,
    /// Sinkhorn sweeps per proximal step.
    pub ibpp_scalings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Mm,
            epsilon: None,
            max_outer: 200,
            max_inner: 100,
            outer_tol: 1e-7,
            inner_tol: 1e-9,
            ibpp_scalings: 10,
        }
    }
}

impl SolverConfig {
    pub fn new(kind: SolverKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(SolverError::Config("tolerances must be > 0".into()));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(SolverError::Config(format!("epsilon must be > 0, got {eps}")));
            }
        }
        if self.max_inner == 0 || self.ibpp_scalings == 0 {
            return Err(SolverError::Config("inner iteration budgets must be positive".into()));
        }
        Ok(())
    }

    fn epsilon_for(&self, cost: &Tensor) -> Option<f64> {
        let auto = |v: f64| if v > 0.0 && v.is_finite() { v } else { 1e-3 };
        match self.kind {
            SolverKind::Sinkhorn => Some(self.epsilon.unwrap_or_else(|| {
                auto(1e-3 * cost.data().iter().map(|c| c.abs()).sum::<f64>() / cost.len() as f64)
            })),
            SolverKind::Ibpp => Some(self.epsilon.unwrap_or_else(|| auto(1e-2 * cost.max_abs()))),
            _ => None,
        }
    }

    fn run_inner(&self, problem: &InnerProblem<'_>, init: &Tensor, eps: Option<f64>) -> Result<InnerResult, SolverError> {
        // multiplicative solvers cannot revive exact zeros left by underflow
        let positive = || init.map(|x| x.max(f64::MIN_POSITIVE));
        match self.kind {
            SolverKind::Mm => inner_mm_uot(problem, &positive(), self.max_inner, self.inner_tol),
            SolverKind::Ibpp => inner_ibpp_uot(
                problem,
                eps.expect("entropic epsilon"),
                &positive(),
                self.max_inner,
                self.ibpp_scalings,
                self.inner_tol,
            ),
            SolverKind::Sinkhorn => {
                inner_sinkhorn_uot(problem, eps.expect("entropic epsilon"), self.max_inner, self.inner_tol)
            }
            SolverKind::Boxqn => inner_boxqn_uot(problem, init, self.max_inner, self.inner_tol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Uniform,
    Provided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative loss change fell below the outer tolerance.
    Tolerance,
    /// No step toward the inner solution lowered the loss.
    Stalled,
    /// The plan has zero mass, a fixed point of the iteration.
    ZeroMass,
    MaxIterations,
}

/// Result of a classical solve.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub plan: TransportPlan,
    pub solver: SolverKind,
    pub alpha: f64,
    pub rho: f64,
    /// Last entropic strength used, for entropic solvers.
    pub epsilon: Option<f64>,
    /// Loss of the initial plan followed by the loss after each outer
    /// iteration.
    pub loss_trace: Vec<f64>,
    pub inner_iters: Vec<usize>,
    pub time_ms: f64,
    pub converged: bool,
    pub init: InitKind,
    pub stop: StopReason,
}

/// Serializable summary of a [`SolverReport`], without the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub solver: SolverKind,
    pub alpha: f64,
    pub rho: f64,
    pub epsilon: Option<f64>,
    pub loss_trace: Vec<f64>,
    pub iters: usize,
    pub time_ms: f64,
    pub mass: f64,
    pub converged: bool,
    #[serde(default = "default_init")]
    pub init: InitKind,
    #[serde(default)]
    pub inner_iters: Vec<usize>,
    #[serde(default)]
    pub stop: Option<StopReason>,
}

fn default_init() -> InitKind {
    InitKind::Uniform
}

impl SolverRecord {
    pub fn loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

impl SolverReport {
    pub fn loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial loss")
    }

    /// Outer iterations performed.
    pub fn iters(&self) -> usize {
        self.loss_trace.len() - 1
    }

    pub fn record(&self) -> SolverRecord {
        SolverRecord {
            solver: self.solver,
            alpha: self.alpha,
            rho: self.rho,
            epsilon: self.epsilon,
            loss_trace: self.loss_trace.clone(),
            iters: self.iters(),
            time_ms: self.time_ms,
            mass: self.plan.mass(),
            converged: self.converged,
            init: self.init,
            inner_iters: self.inner_iters.clone(),
            stop: Some(self.stop),
        }
    }
}

/// Minimizes the FUGW loss between two graphs, from `init` or from the
/// product of the node weights. The reported time includes building the
/// cost matrices.
pub fn solve_fugw(
    g1: &Graph,
    g2: &Graph,
    params: &FugwParams,
    config: &SolverConfig,
    init: Option<&Tensor>,
) -> Result<SolverReport, SolverError> {
    let start = Instant::now();
    let problem = FugwProblem::new(g1, g2)?;
    solve_timed(&problem, params, config, init, start)
}

/// [`solve_fugw`] from a given plan.
pub fn warm_start_solve(
    g1: &Graph,
    g2: &Graph,
    params: &FugwParams,
    config: &SolverConfig,
    init: &Tensor,
) -> Result<SolverReport, SolverError> {
    solve_fugw(g1, g2, params, config, Some(init))
}

/// [`solve_fugw`] on precomputed problem data.
pub fn solve_problem(
    problem: &FugwProblem,
    params: &FugwParams,
    config: &SolverConfig,
    init: Option<&Tensor>,
) -> Result<SolverReport, SolverError> {
    solve_timed(problem, params, config, init, Instant::now())
}

fn check_finite(value: f64, iteration: usize, quantity: &str) -> Result<f64, SolverError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SolverError::NonFinite {
            iteration,
            quantity: quantity.to_string(),
        })
    }
}

fn solve_timed(
    problem: &FugwProblem,
    params: &FugwParams,
    config: &SolverConfig,
    init: Option<&Tensor>,
    start: Instant,
) -> Result<SolverReport, SolverError> {
    params.validate()?;
    config.validate()?;
    let (n1, n2) = problem.shape();
    let (alpha, rho) = (params.alpha, params.rho);
    let init_kind = if init.is_some() { InitKind::Provided } else { InitKind::Uniform };
    if let Some(p0) = init {
        if p0.shape() != (n1, n2) {
            return Err(SolverError::Shape {
                what: "initial plan",
                expected: (n1, n2),
                found: p0.shape(),
            });
        }
        TransportPlan::new(p0.clone())?;
    }

    let finish = |plan: Tensor, trace: Vec<f64>, inner: Vec<usize>, eps, stop| -> Result<SolverReport, SolverError> {
        Ok(SolverReport {
            plan: TransportPlan::new(plan)?,
            solver: config.kind,
            alpha,
            rho,
            epsilon: eps,
            loss_trace: trace,
            inner_iters: inner,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
            converged: stop != StopReason::MaxIterations,
            init: init_kind,
            stop,
        })
    };

    // every term is nonnegative and vanishes at P = 0
    if rho == 0.0 {
        return finish(Tensor::zeros(n1, n2), vec![0.0], vec![], None, StopReason::ZeroMass);
    }

    let mut plan = init.cloned().unwrap_or_else(|| problem.product_plan());
    let (terms, mut lin) = problem.terms(&plan)?;
    let mut loss = check_finite(terms.combine(alpha, rho), 0, "initial loss")?;
    let mut trace = vec![loss];
    let mut inner_iters = Vec::new();
    let mut last_eps = None;

    for t in 1..=config.max_outer {
        let mass = plan.sum();
        // a subnormal mass would make the inner marginal weight vanish
        if !(2.0 * rho * mass).is_normal() {
            return finish(plan, trace, inner_iters, last_eps, StopReason::ZeroMass);
        }
        let p = plan.row_sums();
        let q = plan.col_sums();
        let shift = 2.0
            * rho
            * (kl_unnormalized(&p, &problem.w1) + kl_unnormalized(&q, &problem.w2) + 2.0 * (mass - 1.0));
        let cost = Tensor::from_fn(n1, n2, |i, j| {
            (1.0 - alpha) * problem.cost.get(i, j) + 2.0 * alpha * lin.get(i, j) + shift
        });
        check_finite(cost.max_abs(), t, "linearized cost")?;
        let inner = InnerProblem {
            cost: &cost,
            a: &problem.w1,
            b: &problem.w2,
            rho: 2.0 * rho * mass,
        };
        let eps = config.epsilon_for(&cost);
        last_eps = eps;
        let result = config.run_inner(&inner, &plan, eps).map_err(|e| match e {
            SolverError::NonFinite { quantity, .. } => SolverError::NonFinite {
                iteration: t,
                quantity: format!("inner {quantity}"),
            },
            other => other,
        })?;
        inner_iters.push(result.iters);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = if step == 1.0 {
                result.plan.clone()
            } else {
                plan.zip_map(&result.plan, "step", |x, y| x + step * (y - x))?
            };
            let (terms, cand_lin) = problem.terms(&candidate)?;
            let cand_loss = check_finite(terms.combine(alpha, rho), t, "loss")?;
            if cand_loss <= loss {
                accepted = Some((candidate, cand_lin, cand_loss));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_lin, cand_loss)) = accepted else {
            return finish(plan, trace, inner_iters, last_eps, StopReason::Stalled);
        };
        let change = (loss - cand_loss).abs();
        plan = candidate;
        lin = cand_lin;
        loss = cand_loss;
        trace.push(loss);
        if change <= config.outer_tol * loss.abs() || loss == 0.0 {
            return finish(plan, trace, inner_iters, last_eps, StopReason::Tolerance);
        }
    }
    finish(plan, trace, inner_iters, last_eps, StopReason::MaxIterations)
}
