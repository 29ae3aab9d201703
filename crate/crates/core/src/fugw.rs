//! The fused unbalanced Gromov-Wasserstein loss.
//!
//! For graphs `(F1, D1, w1)`, `(F2, D2, w2)` and a nonnegative plan `P`:
//!
//! ```text
//! L(P) = (1 - alpha) <M, P> + alpha <L(x)P, P>
//!        + rho [ KL(P1 (x) P1 | w1 (x) w1) + KL(P2 (x) P2 | w2 (x) w2) ]
//! ```
//!
//! with `M[i][j] = |F1_i - F2_j|^2` and
//! `(L(x)P)[i][j] = sum_kl (D1[i][k] - D2[j][l])^2 P[k][l]`, the latter computed
//! in cubic time as `(D1.^2) p 1^T + 1 q^T (D2.^2)^T - 2 D1 P D2^T` with `p`, `q`
//! the marginals of `P`. KL is the generalized divergence for unnormalized
//! measures, `sum a ln(a / b) - a + b`.
//!
//! Every quantity exists twice: on plain tensors for the solvers, and on
//! autodiff variables for training and the downstream applications.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::graph::Graph;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum FugwError {
    #[error("{what}: expected shape {expected:?}, got {found:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("plan entry ({i}, {j}) = {value} is negative or non-finite")]
    InvalidPlan { i: usize, j: usize, value: f64 },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = FugwError> = std::result::Result<T, E>;

/// Loss trade-offs. `epsilon` only affects entropic solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FugwParams {
    pub alpha: f64,
    pub rho: f64,
    #[serde(default)]
    pub epsilon: f64,
}

impl FugwParams {
    pub fn new(alpha: f64, rho: f64) -> Result<Self> {
        let p = Self {
            alpha,
            rho,
            epsilon: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FugwError::Params(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(FugwError::Params(format!("rho = {} must be >= 0", self.rho)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(FugwError::Params(format!("epsilon = {} must be >= 0", self.epsilon)));
        }
        Ok(())
    }
}

/// A nonnegative transport plan with its marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    plan: Tensor,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    mass: f64,
}

impl TransportPlan {
    pub fn new(plan: Tensor) -> Result<Self> {
        for i in 0..plan.rows() {
            for (j, &v) in plan.row(i).iter().enumerate() {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(FugwError::InvalidPlan { i, j, value: v });
                }
            }
        }
        let row_marginal = plan.row_sums();
        let col_marginal = plan.col_sums();
        let mass = plan_mass(&plan);
        Ok(Self {
            plan,
            row_marginal,
            col_marginal,
            mass,
        })
    }

    pub fn plan(&self) -> &Tensor {
        &self.plan
    }

    pub fn into_plan(self) -> Tensor {
        self.plan
    }

    /// `P 1`.
    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    /// `P^T 1`.
    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn shape(&self) -> (usize, usize) {
        self.plan.shape()
    }
}

/// `M[i][j] = |F1_i - F2_j|^2`.
pub fn wasserstein_cost(f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    if f1.cols() != f2.cols() {
        return Err(FugwError::Shape {
            what: "feature dimension",
            expected: (f2.rows(), f1.cols()),
            found: f2.shape(),
        });
    }
    Ok(Tensor::from_fn(f1.rows(), f2.rows(), |i, j| {
        f1.row(i)
            .iter()
            .zip(f2.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }))
}

fn check_plan_shape(plan: &Tensor, n1: usize, n2: usize) -> Result<()> {
    if plan.shape() != (n1, n2) {
        return Err(FugwError::Shape {
            what: "plan",
            expected: (n1, n2),
            found: plan.shape(),
        });
    }
    Ok(())
}

/// `L (x) P` for square connectivity matrices `d1` (`n1 x n1`) and `d2`
/// (`n2 x n2`), in `O(n1^2 n2 + n1 n2^2)`.
pub fn gw_linearization(d1: &Tensor, d2: &Tensor, plan: &Tensor) -> Result<Tensor> {
    let d1_sq = d1.map(|v| v * v);
    let d2_sq = d2.map(|v| v * v);
    gw_linearization_with_squares(d1, d2, &d1_sq, &d2_sq, plan)
}

fn gw_linearization_with_squares(
    d1: &Tensor,
    d2: &Tensor,
    d1_sq: &Tensor,
    d2_sq: &Tensor,
    plan: &Tensor,
) -> Result<Tensor> {
    let (n1, n2) = (d1.rows(), d2.rows());
    if d1.cols() != n1 {
        return Err(FugwError::Shape {
            what: "D1",
            expected: (n1, n1),
            found: d1.shape(),
        });
    }
    if d2.cols() != n2 {
        return Err(FugwError::Shape {
            what: "D2",
            expected: (n2, n2),
            found: d2.shape(),
        });
    }
    check_plan_shape(plan, n1, n2)?;
    let p = plan.row_sums();
    let q = plan.col_sums();
    let left = d1_sq.matvec(&p);
    // q^T (D2.^2)^T = (D2.^2 q)^T
    let right = d2_sq.matvec(&q);
    let mut cross = d1.matmul(plan)?.matmul_nt(d2)?;
    for i in 0..n1 {
        let row = cross.row_mut(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = left[i] + right[j] - 2.0 * *c;
        }
    }
    Ok(cross)
}

/// Generalized KL divergence `sum a ln(a/b) - a + b`, with `0 ln 0 = 0`.
/// Returns `+inf` when some `b_i = 0 < a_i`.
pub fn kl_unnormalized(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "kl_unnormalized length mismatch");
    let mut s = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai > 0.0 {
            if bi <= 0.0 {
                return f64::INFINITY;
            }
            s += ai * (ai / bi).ln();
        }
        s += bi - ai;
    }
    s
}

/// `KL(a (x) a | b (x) b)` through
/// `2 m(a) sum a ln(a/b) - m(a)^2 + m(b)^2`.
pub fn kl_product(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "kl_product length mismatch");
    let ma: f64 = a.iter().sum();
    let mb: f64 = b.iter().sum();
    let mut cross = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai > 0.0 {
            if bi <= 0.0 {
                return f64::INFINITY;
            }
            cross += ai * (ai / bi).ln();
        }
    }
    2.0 * ma * cross - ma * ma + mb * mb
}

/// `KL(P1 (x) P1 | w1 (x) w1) + KL(P2 (x) P2 | w2 (x) w2)`.
pub fn marginal_penalty(plan: &Tensor, w1: &[f64], w2: &[f64]) -> Result<f64> {
    check_plan_shape(plan, w1.len(), w2.len())?;
    Ok(kl_product(&plan.row_sums(), w1) + kl_product(&plan.col_sums(), w2))
}

pub fn plan_mass(plan: &Tensor) -> f64 {
    plan.sum()
}

/// The three loss terms, unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub wasserstein: f64,
    pub gromov: f64,
    pub marginal: f64,
}

impl LossTerms {
    pub fn combine(&self, alpha: f64, rho: f64) -> f64 {
        // rho * marginal is skipped at rho = 0 so an infinite penalty does
        // not turn into NaN
        let pen = if rho == 0.0 { 0.0 } else { rho * self.marginal };
        (1.0 - alpha) * self.wasserstein + alpha * self.gromov + pen
    }
}

/// Precomputed pieces of one graph pair, reused across many plans.
#[derive(Debug, Clone)]
pub struct FugwProblem {
    pub cost: Tensor,
    pub d1: Tensor,
    pub d2: Tensor,
    d1_sq: Tensor,
    d2_sq: Tensor,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl FugwProblem {
    pub fn new(g1: &Graph, g2: &Graph) -> Result<Self> {
        Self::from_parts(
            g1.features(),
            g2.features(),
            g1.connectivity().clone(),
            g2.connectivity().clone(),
            g1.weights().to_vec(),
            g2.weights().to_vec(),
        )
    }

    pub fn from_parts(
        f1: &Tensor,
        f2: &Tensor,
        d1: Tensor,
        d2: Tensor,
        w1: Vec<f64>,
        w2: Vec<f64>,
    ) -> Result<Self> {
        let cost = wasserstein_cost(f1, f2)?;
        let (n1, n2) = cost.shape();
        if d1.shape() != (n1, n1) {
            return Err(FugwError::Shape {
                what: "D1",
                expected: (n1, n1),
                found: d1.shape(),
            });
        }
        if d2.shape() != (n2, n2) {
            return Err(FugwError::Shape {
                what: "D2",
                expected: (n2, n2),
                found: d2.shape(),
            });
        }
        if w1.len() != n1 || w2.len() != n2 {
            return Err(FugwError::Shape {
                what: "node weights",
                expected: (n1, n2),
                found: (w1.len(), w2.len()),
            });
        }
        Ok(Self {
            d1_sq: d1.map(|v| v * v),
            d2_sq: d2.map(|v| v * v),
            cost,
            d1,
            d2,
            w1,
            w2,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.cost.shape()
    }

    pub fn linearization(&self, plan: &Tensor) -> Result<Tensor> {
        gw_linearization_with_squares(&self.d1, &self.d2, &self.d1_sq, &self.d2_sq, plan)
    }

    /// Loss terms, also returning `L (x) P` for reuse.
    pub fn terms(&self, plan: &Tensor) -> Result<(LossTerms, Tensor)> {
        let lin = self.linearization(plan)?;
        let terms = LossTerms {
            wasserstein: self.cost.dot(plan)?,
            gromov: lin.dot(plan)?,
            marginal: marginal_penalty(plan, &self.w1, &self.w2)?,
        };
        Ok((terms, lin))
    }

    pub fn loss(&self, plan: &Tensor, alpha: f64, rho: f64) -> Result<f64> {
        Ok(self.terms(plan)?.0.combine(alpha, rho))
    }

    /// Product of the node weights, the uniform starting plan.
    pub fn product_plan(&self) -> Tensor {
        Tensor::outer(&self.w1, &self.w2)
    }
}

/// FUGW loss of `plan` between two graphs.
pub fn fugw_loss(g1: &Graph, g2: &Graph, plan: &Tensor, params: &FugwParams) -> Result<f64> {
    params.validate()?;
    FugwProblem::new(g1, g2)?.loss(plan, params.alpha, params.rho)
}

/// A graph's features and connectivity as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct GraphVars<'t> {
    pub features: Var<'t>,
    pub connectivity: Var<'t>,
    /// Node weights as an `n x 1` constant.
    pub weights: Var<'t>,
}

impl<'t> GraphVars<'t> {
    /// All three as constants.
    pub fn constant(tape: &'t Tape, g: &Graph) -> Self {
        Self {
            features: tape.constant(g.features().clone()),
            connectivity: tape.constant(g.connectivity().clone()),
            weights: tape.constant(Tensor::column(g.weights())),
        }
    }

    pub fn n(&self) -> usize {
        self.features.shape().0
    }
}

/// `KL(a (x) a | b (x) b)` on the tape; `a` and `b` are column vectors.
pub fn kl_product_var<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let ma = a.sum();
    let mb = b.sum();
    let log_ratio = a.ln().sub(b.ln())?;
    let cross = a.mul(log_ratio)?.sum();
    let two_ma_cross = ma.mul(cross)?.scale(2.0);
    Ok(two_ma_cross.sub(ma.mul(ma)?)?.add(mb.mul(mb)?)?)
}

/// Loss terms on the tape.
pub fn loss_terms_var<'t>(g1: &GraphVars<'t>, g2: &GraphVars<'t>, plan: Var<'t>) -> Result<[Var<'t>; 3]> {
    let (n1, n2) = (g1.n(), g2.n());
    if plan.shape() != (n1, n2) {
        return Err(FugwError::Shape {
            what: "plan",
            expected: (n1, n2),
            found: plan.shape(),
        });
    }
    let cost = g1.features.sq_dist(g2.features)?;
    let wasserstein = cost.inner(plan)?;

    let p = plan.row_sums();
    let q = plan.col_sums();
    let (d1, d2) = (g1.connectivity, g2.connectivity);
    let left = d1.mul(d1)?.matmul(p)?;
    let right = q.matmul(d2.mul(d2)?.t())?;
    let cross = d1.matmul(plan)?.matmul(d2.t())?;
    let lin = left.add(right)?.sub(cross.scale(2.0))?;
    let gromov = lin.inner(plan)?;

    let marginal = kl_product_var(p, g1.weights)?.add(kl_product_var(q.t(), g2.weights)?)?;
    Ok([wasserstein, gromov, marginal])
}

/// FUGW loss on the tape, differentiable in the plan and in any graph
/// quantity recorded as a parameter.
pub fn fugw_loss_var<'t>(
    g1: &GraphVars<'t>,
    g2: &GraphVars<'t>,
    plan: Var<'t>,
    alpha: f64,
    rho: f64,
) -> Result<Var<'t>> {
    let [w, gw, pen] = loss_terms_var(g1, g2, plan)?;
    Ok(w.scale(1.0 - alpha).add(gw.scale(alpha))?.add(pen.scale(rho))?)
}
