//! Unbalanced Sinkhorn scalings and the proximal-point solver built on them.
//!
//! Both solve problems of the form
//!
//! ```text
//! min_P <C, P> + rho KL(P1 | a) + rho KL(P^T 1 | b) + eps KL(P | R)
//! ```
//!
//! whose minimizer is `diag(u) K diag(v)` with `K = R * exp(-C / eps)` and
//! the scalings fixed points of `u = (a / K v)^lambda`,
//! `v = (b / K^T u)^lambda`, `lambda = rho / (rho + eps)`. Sinkhorn uses the
//! product reference `R = a b^T`; the proximal-point solver re-centres `R`
//! on its current iterate after a fixed small number of scalings.

use super::{InnerProblem, InnerResult, SolverError};
use crate::tensor::Tensor;

/// Relative threshold below which `eps` forces log-domain iterations.
const LOG_DOMAIN_RATIO: f64 = 1e-2;

fn needs_log_domain(cost: &Tensor, eps: f64) -> bool {
    eps < LOG_DOMAIN_RATIO * cost.max_abs()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Scaling iterations on a fixed log-kernel. `f`, `g` are the log-scalings,
/// updated in place. Returns the number of sweeps and whether the largest
/// change in a log-scaling fell below `tol`.
fn log_sweeps(
    log_k: &Tensor,
    log_a: &[f64],
    log_b: &[f64],
    lambda: f64,
    f: &mut [f64],
    g: &mut [f64],
    sweeps: usize,
    tol: f64,
) -> (usize, bool) {
    let (n1, n2) = log_k.shape();
    let mut col = vec![0.0; n1];
    for it in 1..=sweeps {
        let mut change = 0.0_f64;
        for i in 0..n1 {
            let row = log_k.row(i);
            let lse = log_sum_exp(row.iter().zip(g.iter()).map(|(k, gj)| k + gj));
            // a row with no support keeps scaling 1; its mass is zero anyway
            let new = if lse == f64::NEG_INFINITY { 0.0 } else { lambda * (log_a[i] - lse) };
            change = change.max((new - f[i]).abs());
            f[i] = new;
        }
        for j in 0..n2 {
            for (i, c) in col.iter_mut().enumerate() {
                *c = log_k.get(i, j) + f[i];
            }
            let lse = log_sum_exp(col.iter().copied());
            let new = if lse == f64::NEG_INFINITY { 0.0 } else { lambda * (log_b[j] - lse) };
            change = change.max((new - g[j]).abs());
            g[j] = new;
        }
        if change < tol {
            return (it, true);
        }
    }
    (sweeps, false)
}

fn plan_from_log(log_k: &Tensor, f: &[f64], g: &[f64]) -> Tensor {
    Tensor::from_fn(log_k.rows(), log_k.cols(), |i, j| (f[i] + log_k.get(i, j) + g[j]).exp())
}

/// Scaling iterations on a fixed kernel in the linear domain. Returns `None`
/// when a scaling overflows or a kernel row or column underflows entirely,
/// so the caller can fall back to log-domain.
fn linear_sweeps(
    k: &Tensor,
    a: &[f64],
    b: &[f64],
    lambda: f64,
    u: &mut [f64],
    v: &mut [f64],
    sweeps: usize,
    tol: f64,
) -> Option<(usize, bool)> {
    let update = |target: &[f64], kx: Vec<f64>, out: &mut [f64]| -> Option<f64> {
        let mut change = 0.0_f64;
        for ((o, &t), kxi) in out.iter_mut().zip(target).zip(kx) {
            let new = (t / kxi).powf(lambda);
            if !new.is_finite() || new == 0.0 {
                return None;
            }
            change = change.max((new / *o).ln().abs());
            *o = new;
        }
        Some(change)
    };
    for it in 1..=sweeps {
        let cu = update(a, k.matvec(v), u)?;
        let cv = update(b, k.matvec_t(u), v)?;
        if cu.max(cv) < tol {
            return Some((it, true));
        }
    }
    Some((sweeps, false))
}

fn scale_plan(k: &Tensor, u: &[f64], v: &[f64]) -> Tensor {
    Tensor::from_fn(k.rows(), k.cols(), |i, j| u[i] * k.get(i, j) * v[j])
}

fn lambda(rho: f64, eps: f64) -> f64 {
    rho / (rho + eps)
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.ln()).collect()
}

/// Entropic unbalanced transport by Sinkhorn scalings against the product
/// reference measure `a b^T`.
pub fn inner_sinkhorn_uot(
    problem: &InnerProblem<'_>,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<InnerResult, SolverError> {
    problem.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SolverError::Config(format!("entropic epsilon must be > 0, got {eps}")));
    }
    let InnerProblem { cost, a, b, rho } = *problem;
    let lam = lambda(rho, eps);
    if !needs_log_domain(cost, eps) {
        let k = Tensor::from_fn(cost.rows(), cost.cols(), |i, j| a[i] * b[j] * (-cost.get(i, j) / eps).exp());
        let mut u = vec![1.0; a.len()];
        let mut v = vec![1.0; b.len()];
        if let Some((iters, converged)) = linear_sweeps(&k, a, b, lam, &mut u, &mut v, max_iters, tol) {
            let plan = scale_plan(&k, &u, &v);
            if plan.is_finite() {
                return Ok(InnerResult { plan, iters, converged });
            }
        }
    }
    let (log_a, log_b) = (log_weights(a), log_weights(b));
    let log_k = Tensor::from_fn(cost.rows(), cost.cols(), |i, j| log_a[i] + log_b[j] - cost.get(i, j) / eps);
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    let (iters, converged) = log_sweeps(&log_k, &log_a, &log_b, lam, &mut f, &mut g, max_iters, tol);
    let plan = plan_from_log(&log_k, &f, &g);
    finite_or_err(plan, iters, converged, "Sinkhorn plan")
}

fn finite_or_err(plan: Tensor, iters: usize, converged: bool, what: &str) -> Result<InnerResult, SolverError> {
    if !plan.is_finite() {
        return Err(SolverError::NonFinite {
            iteration: iters,
            quantity: what.to_string(),
        });
    }
    Ok(InnerResult { plan, iters, converged })
}

/// Largest change between two pairs of marginals, relative to the mass.
pub(crate) fn marginal_change(old_rows: &[f64], rows: &[f64], old_cols: &[f64], cols: &[f64], mass: f64) -> f64 {
    let old_mass: f64 = old_rows.iter().sum();
    let scale = mass.max(old_mass).max(f64::MIN_POSITIVE);
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
    d(old_rows, rows).max(d(old_cols, cols)) / scale
}

/// Inexact Bregman proximal point: each step runs `scalings` Sinkhorn sweeps
/// on the kernel `P_t * exp(-C / eps)`. `max_steps` bounds the number of
/// proximal steps; the loop stops early once the marginals move by less than
/// `tol` (relative to the mass) over one step.
pub fn inner_ibpp_uot(
    problem: &InnerProblem<'_>,
    eps: f64,
    init: &Tensor,
    max_steps: usize,
    scalings: usize,
    tol: f64,
) -> Result<InnerResult, SolverError> {
    problem.validate()?;
    problem.check_init(init)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SolverError::Config(format!("entropic epsilon must be > 0, got {eps}")));
    }
    if scalings == 0 {
        return Err(SolverError::Config("proximal steps need at least one scaling".into()));
    }
    let InnerProblem { cost, a, b, rho } = *problem;
    let lam = lambda(rho, eps);
    let (n1, n2) = cost.shape();
    // The iterate is kept as ln P alongside P: entries that underflow in one
    // step must stay recoverable once the scalings catch up.
    let mut log_plan = init.map(f64::ln);
    let mut plan = init.clone();
    let log_gibbs = cost.map(|c| -c / eps);
    let gibbs = (!needs_log_domain(cost, eps)).then(|| log_gibbs.map(f64::exp));
    let (log_a, log_b) = (log_weights(a), log_weights(b));
    // log-scalings carried from one proximal step to the next: each step
    // multiplies the kernel by the same Gibbs factor, so the previous
    // correction is the natural starting guess
    let mut f = vec![0.0_f64; n1];
    let mut g = vec![0.0_f64; n2];
    let mut row_sums = plan.row_sums();
    let mut col_sums = plan.col_sums();

    for step in 1..=max_steps {
        let mut linear_done = false;
        if let Some(gibbs) = &gibbs {
            let k = Tensor::new(n1, n2, plan.data().iter().zip(gibbs.data()).map(|(p, q)| p * q).collect())?;
            let mut u: Vec<f64> = f.iter().map(|x| x.exp()).collect();
            let mut v: Vec<f64> = g.iter().map(|x| x.exp()).collect();
            if linear_sweeps(&k, a, b, lam, &mut u, &mut v, scalings, 0.0).is_some() {
                f = u.iter().map(|x| x.ln()).collect();
                g = v.iter().map(|x| x.ln()).collect();
                plan = scale_plan(&k, &u, &v);
                linear_done = true;
            }
        }
        if !linear_done {
            let log_k = log_plan.add(&log_gibbs)?;
            log_sweeps(&log_k, &log_a, &log_b, lam, &mut f, &mut g, scalings, 0.0);
            plan = plan_from_log(&log_k, &f, &g);
        }
        for i in 0..n1 {
            let (lp, lg) = (log_plan.row_mut(i), log_gibbs.row(i));
            for j in 0..n2 {
                lp[j] += f[i] + lg[j] + g[j];
            }
        }
        if !plan.is_finite() {
            return Err(SolverError::NonFinite {
                iteration: step,
                quantity: "proximal-point plan".into(),
            });
        }
        let (rows, cols) = (plan.row_sums(), plan.col_sums());
        let change = marginal_change(&row_sums, &rows, &col_sums, &cols, plan.sum());
        (row_sums, col_sums) = (rows, cols);
        if change < tol {
            return Ok(InnerResult {
                plan,
                iters: step,
                converged: true,
            });
        }
    }
    Ok(InnerResult {
        plan,
        iters: max_steps,
        converged: false,
    })
}
