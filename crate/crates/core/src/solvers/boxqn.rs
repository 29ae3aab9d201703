//! Limited-memory quasi-Newton descent over the box `P >= FLOOR`.
//!
//! Variables within a shrinking distance of the bound whose gradient pushes
//! outward form the active set and take a plain gradient step, which sends
//! them to the bound; the two-loop recursion runs on the remaining free
//! coordinates. The step is projected back onto the box with Armijo
//! backtracking along the projected path.

use std::collections::VecDeque;

use super::{InnerProblem, InnerResult, SolverError};
use crate::tensor::Tensor;

/// Lower bound keeping the KL terms differentiable.
pub const FLOOR: f64 = 1e-30;
const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

struct Objective<'a> {
    problem: &'a InnerProblem<'a>,
    n2: usize,
}

impl Objective<'_> {
    fn marginals(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n2 = self.n2;
        let n1 = x.len() / n2;
        let mut p = vec![0.0; n1];
        let mut q = vec![0.0; n2];
        for i in 0..n1 {
            for j in 0..n2 {
                let v = x[i * n2 + j];
                p[i] += v;
                q[j] += v;
            }
        }
        (p, q)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (p, q) = self.marginals(x);
        let InnerProblem { cost, a, b, rho } = *self.problem;
        let lin: f64 = cost.data().iter().zip(x).map(|(c, v)| c * v).sum();
        lin + rho * (crate::fugw::kl_unnormalized(&p, a) + crate::fugw::kl_unnormalized(&q, b))
    }

    /// Inverse of the diagonal of the Hessian, `1 / (rho/p_i + rho/q_j)`.
    fn inverse_diagonal(&self, x: &[f64]) -> Vec<f64> {
        let (p, q) = self.marginals(x);
        let rho = self.problem.rho;
        let n2 = self.n2;
        (0..x.len()).map(|k| 1.0 / (rho / p[k / n2] + rho / q[k % n2])).collect()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (p, q) = self.marginals(x);
        let InnerProblem { cost, a, b, rho } = *self.problem;
        let lp: Vec<f64> = p.iter().zip(a).map(|(pi, ai)| rho * (pi / ai).ln()).collect();
        let lq: Vec<f64> = q.iter().zip(b).map(|(qj, bj)| rho * (qj / bj).ln()).collect();
        let n2 = self.n2;
        cost.data()
            .iter()
            .enumerate()
            .map(|(k, c)| c + lp[k / n2] + lq[k % n2])
            .collect()
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(xi, gi)| (xi - (xi - gi).max(FLOOR)).abs())
        .fold(0.0, f64::max)
}

/// Two-loop recursion restricted to the free coordinates, starting from the
/// diagonal inverse Hessian estimate `h`.
fn direction(g: &[f64], free: &[bool], h: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut d: Vec<f64> = g.iter().zip(free).map(|(gi, &f)| if f { -gi } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &d);
        for (di, yi) in d.iter_mut().zip(y) {
            *di -= a * yi;
        }
        alphas.push(a);
    }
    d.iter_mut().zip(h).for_each(|(v, hi)| *v *= hi);
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &d);
        for (di, si) in d.iter_mut().zip(s) {
            *di += (a - b) * si;
        }
    }
    for (di, &f) in d.iter_mut().zip(free) {
        if !f {
            *di = 0.0;
        }
    }
    d
}

/// Armijo backtracking along the projected path `max(FLOOR, x + t d)`.
/// Returns the accepted point, the step taken and the new value.
fn line_search(
    obj: &Objective<'_>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let mut t = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| (xi + t * di).max(FLOOR)).collect();
        let step: Vec<f64> = trial.iter().zip(x).map(|(a, b)| a - b).collect();
        let decrease = dot(g, &step);
        let ft = obj.value(&trial);
        if ft.is_finite() && decrease < 0.0 && ft <= fx + ARMIJO * decrease {
            return Some((trial, step, ft));
        }
        t *= 0.5;
    }
    None
}

/// Minimizes `<C, P> + rho KL(P1|a) + rho KL(P^T 1|b)` over `P >= FLOOR`.
/// Stops once the projected-gradient infinity norm drops below `tol`; a
/// failed line search returns the best iterate with `converged = false`.
pub fn inner_boxqn_uot(
    problem: &InnerProblem<'_>,
    init: &Tensor,
    max_iters: usize,
    tol: f64,
) -> Result<InnerResult, SolverError> {
    problem.validate()?;
    problem.check_init(init)?;
    let (n1, n2) = problem.cost.shape();
    let obj = Objective { problem, n2 };
    let mut x: Vec<f64> = init.data().iter().map(|v| v.max(FLOOR)).collect();
    let mut fx = obj.value(&x);
    let mut g = obj.gradient(&x);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let finish = |x: Vec<f64>, iters, converged| -> Result<InnerResult, SolverError> {
        Ok(InnerResult {
            plan: Tensor::new(n1, n2, x)?,
            iters,
            converged,
        })
    };

    for it in 0..max_iters {
        if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite {
                iteration: it,
                quantity: "quasi-Newton objective".into(),
            });
        }
        if projected_gradient_norm(&x, &g) < tol {
            return finish(x, it, true);
        }
        // without the margin, coordinates creeping toward the bound would
        // cut every step short
        let margin = projected_gradient_norm(&x, &g);
        let free: Vec<bool> = x.iter().zip(&g).map(|(&xi, &gi)| !(xi - FLOOR <= margin && gi > 0.0)).collect();
        let h = obj.inverse_diagonal(&x);
        let steepest = || -> Vec<f64> {
            g.iter().zip(&h).zip(&free).map(|((gi, hi), &f)| if f { -gi * hi } else { -gi }).collect()
        };
        let mut d = direction(&g, &free, &h, &memory);
        for ((di, gi), &f) in d.iter_mut().zip(&g).zip(&free) {
            if !f {
                *di = -gi;
            }
        }
        if dot(&d, &g) >= 0.0 {
            memory.clear();
            d = steepest();
        }
        let mut accepted = line_search(&obj, &x, fx, &g, &d);
        if accepted.is_none() && !memory.is_empty() {
            // stale curvature pairs can produce a poor direction; retry once
            // along the scaled steepest descent
            memory.clear();
            accepted = line_search(&obj, &x, fx, &g, &steepest());
        }
        let Some((trial, s, ft)) = accepted else {
            return finish(x, it, false);
        };
        let g_new = obj.gradient(&trial);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = trial;
        fx = ft;
        g = g_new;
    }
    let converged = projected_gradient_norm(&x, &g) < tol;
    finish(x, max_iters, converged)
}
