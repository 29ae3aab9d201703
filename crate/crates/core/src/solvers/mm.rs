//! Majorization-minimization for KL-relaxed transport.
//!
//! Let `Q` be the current iterate with marginals `p = Q1`, `q = Q^T 1`. Since
//! `(P1)_i / p_i` is a convex combination of the ratios `P_ij / Q_ij`,
//! Jensen's inequality on `x ln x` gives
//!
//! ```text
//! KL(P1 | a) <= sum_ij P_ij ln(P_ij p_i / (Q_ij a_i)) - m(P) + m(a),
//! ```
//!
//! with equality at `P = Q`, and symmetrically for the columns. Minimizing
//! this separable majorizer of `<C, P> + rho KL(P1|a) + rho KL(P^T 1|b)`
//! entrywise gives the multiplicative update
//!
//! ```text
//! P_ij <- P_ij sqrt(a_i / p_i) sqrt(b_j / q_j) exp(-C_ij / (2 rho)).
//! ```
//!
//! Its fixed points satisfy `C_ij + rho ln(p_i/a_i) + rho ln(q_j/b_j) = 0`
//! wherever `P_ij > 0`, the stationarity condition of the objective. The
//! iteration runs on `ln P` so entries never underflow to exact zero.

use super::scaling::marginal_change;
use super::{InnerProblem, InnerResult, SolverError};
use crate::tensor::Tensor;

/// Absolute slack allowed on the objective between iterations before the
/// update is declared broken.
const MONOTONE_SLACK: f64 = 1e-9;

pub fn inner_mm_uot(
    problem: &InnerProblem<'_>,
    init: &Tensor,
    max_iters: usize,
    tol: f64,
) -> Result<InnerResult, SolverError> {
    problem.validate()?;
    problem.check_init(init)?;
    let InnerProblem { cost, a, b, rho } = *problem;
    let (n1, n2) = cost.shape();
    if init.data().iter().any(|&x| x <= 0.0) {
        return Err(SolverError::Config("MM needs a strictly positive initial plan".into()));
    }
    let half_log_a: Vec<f64> = a.iter().map(|x| 0.5 * x.ln()).collect();
    let half_log_b: Vec<f64> = b.iter().map(|x| 0.5 * x.ln()).collect();
    let step_cost = cost.map(|c| -c / (2.0 * rho));

    let objective = |plan: &Tensor, p: &[f64], q: &[f64]| -> f64 {
        crate::tensor::dot(cost.data(), plan.data())
            + rho * (crate::fugw::kl_unnormalized(p, a) + crate::fugw::kl_unnormalized(q, b))
    };
    let mut log_p = init.map(f64::ln);
    let mut plan = init.clone();
    let mut p = plan.row_sums();
    let mut q = plan.col_sums();
    let mut obj = objective(&plan, &p, &q);
    for it in 1..=max_iters {
        // marginals of underflowed rows are floored; ln P itself stays finite
        let row_shift: Vec<f64> = (0..n1)
            .map(|i| half_log_a[i] - 0.5 * p[i].max(f64::MIN_POSITIVE).ln())
            .collect();
        let col_shift: Vec<f64> = (0..n2)
            .map(|j| half_log_b[j] - 0.5 * q[j].max(f64::MIN_POSITIVE).ln())
            .collect();
        for i in 0..n1 {
            let lp = log_p.row_mut(i);
            let sc = step_cost.row(i);
            for j in 0..n2 {
                lp[j] += row_shift[i] + col_shift[j] + sc[j];
            }
        }
        let next = log_p.map(f64::exp);
        if !next.is_finite() {
            return Err(SolverError::NonFinite {
                iteration: it,
                quantity: "MM plan".into(),
            });
        }
        let (np, nq) = (next.row_sums(), next.col_sums());
        let new_obj = objective(&next, &np, &nq);
        if new_obj > obj + MONOTONE_SLACK * obj.abs().max(1.0) {
            return Err(SolverError::ObjectiveIncrease {
                iteration: it,
                before: obj,
                after: new_obj,
            });
        }
        let change = marginal_change(&p, &np, &q, &nq, next.sum());
        (plan, p, q, obj) = (next, np, nq, new_obj);
        if change < tol {
            return Ok(InnerResult {
                plan,
                iters: it,
                converged: true,
            });
        }
    }
    Ok(InnerResult {
        plan,
        iters: max_iters,
        converged: false,
    })
}

/// Natural residual `max_ij |min(P_ij, g_ij)|` of the optimality conditions
/// `P >= 0`, `g >= 0`, `P * g = 0`, where
/// `g = C + rho ln(p/a) 1^T + rho 1 ln(q/b)^T` is the objective gradient.
pub fn kkt_residual(problem: &InnerProblem<'_>, plan: &Tensor) -> f64 {
    let InnerProblem { cost, a, b, rho } = *problem;
    let p = plan.row_sums();
    let q = plan.col_sums();
    let mut worst = 0.0_f64;
    for i in 0..cost.rows() {
        for j in 0..cost.cols() {
            let g = cost.get(i, j) + rho * (p[i] / a[i]).ln() + rho * (q[j] / b[j]).ln();
            worst = worst.max(plan.get(i, j).min(g).abs());
        }
    }
    worst
}
