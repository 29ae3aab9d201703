use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pair_loss, Result};
use crate::graph::Graph;
use crate::model::ModelWeights;

/// ULOT loss of one `(pair, alpha, rho)` cell, optionally with a solver's
/// loss for the same cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pair: usize,
    pub g1: usize,
    pub g2: usize,
    pub alpha: f64,
    pub rho: f64,
    pub ulot_loss: f64,
    pub time_ms: f64,
    pub solver_loss: Option<f64>,
}

/// Evaluates every pair at every grid point, pairs major.
pub fn evaluate(
    weights: &ModelWeights,
    graphs: &[Graph],
    pairs: &[(usize, usize)],
    grid: &[(f64, f64)],
) -> Result<Vec<EvalRow>> {
    let cells: Vec<(usize, usize, usize, f64, f64)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(k, &(i, j))| grid.iter().map(move |&(a, r)| (k, i, j, a, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(pair, g1, g2, alpha, rho)| {
            let started = Instant::now();
            let ulot_loss = pair_loss(weights, &graphs[g1], &graphs[g2], alpha, rho)?;
            Ok(EvalRow {
                pair,
                g1,
                g2,
                alpha,
                rho,
                ulot_loss,
                time_ms: started.elapsed().as_secs_f64() * 1e3,
                solver_loss: None,
            })
        })
        .collect()
}

/// Sample Pearson correlation; `None` for fewer than two points or a
/// constant input.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
