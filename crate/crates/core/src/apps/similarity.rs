//! Plan mass as a graph similarity, and classical multidimensional scaling.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AppError, Result};
use crate::graph::Graph;
use crate::model::{predict_plan, ModelWeights};
use crate::tensor::Tensor;

/// Symmetric matrix of predicted plan masses between every pair of graphs,
/// diagonal included. Only the upper triangle is predicted; the lower one is
/// its mirror.
pub fn similarity_matrix(graphs: &[Graph], weights: &ModelWeights, alpha: f64, rho: f64) -> Result<Tensor> {
    let m = graphs.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let masses = pairs
        .par_iter()
        .map(|&(i, j)| Ok(predict_plan(&graphs[i], &graphs[j], alpha, rho, weights)?.mass()))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = Tensor::zeros(m, m);
    for (&(i, j), &mass) in pairs.iter().zip(&masses) {
        out.set(i, j, mass);
        out.set(j, i, mass);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `m x dim` coordinates.
    pub coords: Tensor,
    /// Eigenvalues of the double-centered matrix, largest first.
    pub eigenvalues: Vec<f64>,
    /// Fewer than `dim` positive eigenvalues; the missing axes are zero.
    pub padded: bool,
}

/// Monotone decreasing maps from plan mass to dissimilarity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dissimilarity {
    /// `1 - s`
    #[default]
    OneMinus,
    /// `sqrt(1 - s)`, clamped at 0
    SqrtOneMinus,
    /// `-ln s`, with `s` floored at `1e-12`
    NegLog,
}

impl Dissimilarity {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Self::OneMinus => 1.0 - s,
            Self::SqrtOneMinus => (1.0 - s).max(0.0).sqrt(),
            Self::NegLog => -s.max(1e-12).ln(),
        }
    }
}

/// Classical MDS on the dissimilarity `1 - S`: double-center the squared
/// dissimilarities, keep the top `dim` eigenpairs and scale each
/// eigenvector by the root of its eigenvalue, truncating negative ones to 0.
pub fn mds_embed(similarity: &Tensor, dim: usize) -> Result<Embedding> {
    mds_embed_with(similarity, dim, Dissimilarity::OneMinus)
}

/// [`mds_embed`] with another dissimilarity transform.
pub fn mds_embed_with(similarity: &Tensor, dim: usize, transform: Dissimilarity) -> Result<Embedding> {
    let m = similarity.rows();
    if similarity.cols() != m {
        return Err(AppError::Input(format!("similarity matrix is {:?}, not square", similarity.shape())));
    }
    let scale = similarity.max_abs().max(1.0);
    for i in 0..m {
        for j in 0..i {
            if (similarity.get(i, j) - similarity.get(j, i)).abs() > 1e-9 * scale {
                return Err(AppError::Input(format!("similarity matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let sq = DMatrix::from_fn(m, m, |i, j| {
        let d = transform.apply(similarity.get(i, j));
        d * d
    });
    let centering = DMatrix::<f64>::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    let b = -0.5 * &centering * sq * &centering;
    let b = 0.5 * (&b + b.transpose());
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let tiny = 1e-12 * eigenvalues.first().map_or(0.0, |v| v.abs()).max(1.0);
    let positive = eigenvalues.iter().filter(|&&v| v > tiny).count();
    let coords = Tensor::from_fn(m, dim, |i, k| match order.get(k) {
        Some(&col) if k < positive => eig.eigenvectors[(i, col)] * eigenvalues[k].sqrt(),
        _ => 0.0,
    });
    Ok(Embedding {
        coords,
        eigenvalues,
        padded: positive < dim,
    })
}
