//! Timing and comparison helpers shared by the benchmarks.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::fugw::{FugwParams, FugwProblem};
use crate::graph::Graph;
use crate::model::{predict_plan, ModelWeights};
use crate::solvers::{solve_problem, SolverConfig, SolverError, SolverReport};

/// One method on one `(pair, alpha, rho)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub pair: usize,
    pub method: String,
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    pub rho: f64,
    pub loss: f64,
    /// `loss` minus the lowest loss of any method on the same cell.
    pub loss_error: f64,
    /// Median over repeats.
    pub time_ms: f64,
    /// Standard deviation over repeats; 0 for a single repeat.
    pub time_std_ms: f64,
    /// Outer iterations for solvers, 0 for a prediction.
    pub iterations: usize,
}

/// Fills `loss_error` per `(pair, alpha, rho)` cell relative to the best
/// finite loss of that cell.
pub fn fill_loss_errors(records: &mut [BenchRecord]) {
    let key = |r: &BenchRecord| (r.pair, r.alpha.to_bits(), r.rho.to_bits());
    let mut best: std::collections::HashMap<(usize, u64, u64), f64> = std::collections::HashMap::new();
    for r in records.iter().filter(|r| r.loss.is_finite()) {
        let e = best.entry(key(r)).or_insert(f64::INFINITY);
        *e = e.min(r.loss);
    }
    for r in records.iter_mut() {
        r.loss_error = match best.get(&key(r)) {
            Some(b) if r.loss.is_finite() => r.loss - b,
            _ => f64::NAN,
        };
    }
}

/// Median of finite values with the mean of the middle pair for even
/// counts; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (type 7) of the finite values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Population standard deviation; 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Runs `f` `repeats` times (at least once) and returns the last output with
/// the median and standard deviation of the wall times in milliseconds.
pub fn timed<T>(repeats: usize, mut f: impl FnMut() -> T) -> (T, f64, f64) {
    let mut times = Vec::with_capacity(repeats.max(1));
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        out = Some(f());
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    (out.expect("at least one repeat"), median(&times), std_dev(&times))
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// distinct positive `x` or any non-positive value.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// First index of `trace` at or below `target + rel |target|`.
pub fn iterations_to_within(trace: &[f64], target: f64, rel: f64) -> Option<usize> {
    let bound = target + rel * target.abs();
    trace.iter().position(|&l| l <= bound)
}

/// A solver run from the product initialization next to one started from
/// the predicted plan.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub uniform: SolverReport,
    pub warm: SolverReport,
    pub predicted_loss: f64,
}

impl WarmStart {
    /// Iterations each run needs to come within `rel` of the uniform run's
    /// final loss; `None` when a run never gets there.
    pub fn iterations_to(&self, rel: f64) -> (Option<usize>, Option<usize>) {
        let target = self.uniform.loss();
        (
            iterations_to_within(&self.uniform.loss_trace, target, rel),
            iterations_to_within(&self.warm.loss_trace, target, rel),
        )
    }

    /// The warm start reaches the tolerance in strictly fewer iterations.
    pub fn warm_is_faster(&self, rel: f64) -> bool {
        match self.iterations_to(rel) {
            (Some(u), Some(w)) => w < u,
            _ => false,
        }
    }
}

pub fn warm_start(
    g1: &Graph,
    g2: &Graph,
    params: &FugwParams,
    weights: &ModelWeights,
    solver: &SolverConfig,
) -> Result<WarmStart, WarmStartError> {
    let problem = FugwProblem::new(g1, g2).map_err(SolverError::from)?;
    let predicted = predict_plan(g1, g2, params.alpha, params.rho, weights)?;
    let uniform = solve_problem(&problem, params, solver, None)?;
    let warm = solve_problem(&problem, params, solver, Some(predicted.plan()))?;
    let predicted_loss = problem
        .loss(predicted.plan(), params.alpha, params.rho)
        .map_err(SolverError::from)?;
    Ok(WarmStart {
        uniform,
        warm,
        predicted_loss,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum WarmStartError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
