//! Attributed graphs and their generation.

mod dataset;
mod io;
mod sampling;
mod sbm;

use std::collections::VecDeque;
use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Tensor;

pub use dataset::{generate_corpus, load_dataset, Dataset, Manifest, ManifestEntry, PairSample};
pub use io::{load_graph, parse_graph, save_graph, to_json_string};
pub use sampling::{
    alpha_from_uniform, derive_seed, params_from_uniforms, rho_from_uniform, sample_params,
    RHO_MAX, RHO_MIN,
};
pub use sbm::{cluster_key, sbm_generate, SbmConfig};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph is disconnected: {} components, smallest is {smallest:?}", components.len())]
    Disconnected {
        components: Vec<Vec<usize>>,
        smallest: Vec<usize>,
    },
    #[error("{0} matrix is not symmetric at ({1}, {2})")]
    NotSymmetric(&'static str, usize, usize),
    #[error("{0} matrix has a nonzero diagonal at {1}")]
    NonZeroDiagonal(&'static str, usize),
    #[error("adjacency entry ({0}, {1}) is {2}, expected 0 or 1")]
    NotBinary(usize, usize, f64),
    #[error("connectivity entry ({0}, {1}) is negative or non-finite: {2}")]
    BadConnectivity(usize, usize, f64),
    #[error("node weights must be positive and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("{what}: expected {expected}, found {found}")]
    Size {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid SBM configuration: {0}")]
    Config(String),
    #[error("graph file: syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("graph file: missing field `{0}`")]
    MissingField(&'static str),
    #[error("graph file: features row {row} has {found} entries, expected {expected}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("graph file: edge {index} = [{i}, {j}] is invalid for {n} nodes")]
    BadEdge {
        index: usize,
        i: usize,
        j: usize,
        n: usize,
    },
    #[error("graph file: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// An attributed graph `(F, D, w)` with its adjacency and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: Tensor,
    adjacency: Tensor,
    connectivity: Tensor,
    weights: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from undirected edges; connectivity is the hop-count
    /// shortest-path matrix and node weights are uniform.
    pub fn from_edges(
        features: Tensor,
        edges: &[(usize, usize)],
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        let mut adjacency = Tensor::zeros(n, n);
        for (index, &(i, j)) in edges.iter().enumerate() {
            if i >= n || j >= n || i == j {
                return Err(GraphError::BadEdge { index, i, j, n });
            }
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
        }
        let connectivity = shortest_path_matrix(&adjacency)?;
        Self::from_parts(features, adjacency, connectivity, uniform_weights(n), labels)
    }

    /// Builds a graph from explicit parts after checking every invariant.
    pub fn from_parts(
        features: Tensor,
        adjacency: Tensor,
        connectivity: Tensor,
        weights: Vec<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        check_square("adjacency", &adjacency, n)?;
        check_square("connectivity", &connectivity, n)?;
        for i in 0..n {
            for j in 0..n {
                let a = adjacency.get(i, j);
                if a != 0.0 && a != 1.0 {
                    return Err(GraphError::NotBinary(i, j, a));
                }
                let d = connectivity.get(i, j);
                if !(d.is_finite() && d >= 0.0) {
                    return Err(GraphError::BadConnectivity(i, j, d));
                }
            }
        }
        check_symmetric_zero_diag("adjacency", &adjacency)?;
        check_symmetric_zero_diag("connectivity", &connectivity)?;
        if weights.len() != n {
            return Err(GraphError::Size {
                what: "node weights",
                expected: n,
                found: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(GraphError::BadWeights(total));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::Size {
                    what: "labels",
                    expected: n,
                    found: l.len(),
                });
            }
        }
        if !features.is_finite() {
            return Err(GraphError::Invalid("features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            adjacency,
            connectivity,
            weights,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn connectivity(&self) -> &Tensor {
        &self.connectivity
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Undirected edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency.get(i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// The same graph with node `k` of the result equal to node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(order),
            adjacency: self.adjacency.permute(order, order),
            connectivity: self.connectivity.permute(order, order),
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| order.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Replaces features and connectivity, keeping adjacency, weights and labels.
    pub fn with_features_and_connectivity(&self, features: Tensor, connectivity: Tensor) -> Result<Self> {
        Self::from_parts(
            features,
            self.adjacency.clone(),
            connectivity,
            self.weights.clone(),
            self.labels.clone(),
        )
    }
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_square(what: &'static str, m: &Tensor, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(GraphError::Size {
            what,
            expected: n,
            found: if m.rows() != n { m.rows() } else { m.cols() },
        });
    }
    Ok(())
}

fn check_symmetric_zero_diag(what: &'static str, m: &Tensor) -> Result<()> {
    let n = m.rows();
    for i in 0..n {
        if m.get(i, i) != 0.0 {
            return Err(GraphError::NonZeroDiagonal(what, i));
        }
        for j in i + 1..n {
            if m.get(i, j) != m.get(j, i) {
                return Err(GraphError::NotSymmetric(what, i, j));
            }
        }
    }
    Ok(())
}

fn neighbor_lists(adjacency: &Tensor) -> Vec<Vec<usize>> {
    (0..adjacency.rows())
        .map(|i| {
            adjacency
                .row(i)
                .iter()
                .enumerate()
                .filter(|(j, &a)| a != 0.0 && *j != i)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

fn bfs(neighbors: &[Vec<usize>], source: usize, dist: &mut [Option<usize>]) {
    dist.iter_mut().for_each(|d| *d = None);
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &neighbors[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
}

/// Connected components of a binary adjacency matrix, each sorted, ordered
/// by their smallest node.
pub fn connected_components(adjacency: &Tensor) -> Vec<Vec<usize>> {
    let n = adjacency.rows();
    let neighbors = neighbor_lists(adjacency);
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut k = 0;
        while k < comp.len() {
            let u = comp[k];
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Hop-count shortest-path matrix via one breadth-first search per source.
pub fn shortest_path_matrix(adjacency: &Tensor) -> Result<Tensor> {
    let n = adjacency.rows();
    check_square("adjacency", adjacency, n)?;
    let comps = connected_components(adjacency);
    if comps.len() > 1 {
        let smallest = comps.iter().min_by_key(|c| c.len()).cloned().unwrap_or_default();
        return Err(GraphError::Disconnected {
            components: comps,
            smallest,
        });
    }
    Ok(hop_distances(adjacency, 0.0).0)
}

/// Hop distances where unreachable pairs get `unreachable` (or `n` when
/// `unreachable` is 0). Returns the matrix and whether any pair was
/// unreachable.
pub fn hop_distances(adjacency: &Tensor, unreachable: f64) -> (Tensor, bool) {
    let n = adjacency.rows();
    let fill = if unreachable > 0.0 { unreachable } else { n as f64 };
    let neighbors = neighbor_lists(adjacency);
    let mut dist = vec![None; n];
    let mut out = Tensor::zeros(n, n);
    let mut disconnected = false;
    for s in 0..n {
        bfs(&neighbors, s, &mut dist);
        for (t, d) in dist.iter().enumerate() {
            let v = match d {
                Some(h) => *h as f64,
                None => {
                    disconnected = true;
                    fill
                }
            };
            out.set(s, t, v);
        }
    }
    (out, disconnected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_adjacency(n: usize) -> Tensor {
        Tensor::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 })
    }

    #[test]
    fn path_graph_distances() {
        let d = shortest_path_matrix(&path_adjacency(3)).unwrap();
        assert_eq!(d.to_rows(), vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]);
    }

    #[test]
    fn complete_graph_distances() {
        let a = Tensor::from_fn(5, 5, |i, j| if i != j { 1.0 } else { 0.0 });
        assert_eq!(shortest_path_matrix(&a).unwrap(), a);
    }

    #[test]
    fn disconnected_reports_component() {
        let mut a = path_adjacency(4);
        a.set(1, 2, 0.0);
        a.set(2, 1, 0.0);
        a.set(3, 2, 0.0);
        a.set(2, 3, 0.0);
        match shortest_path_matrix(&a) {
            Err(GraphError::Disconnected { components, smallest }) => {
                assert_eq!(components, vec![vec![0, 1], vec![2], vec![3]]);
                assert_eq!(smallest, vec![2]);
            }
            other => panic!("expected disconnected error, got {other:?}"),
        }
        let (d, flagged) = hop_distances(&a, 0.0);
        assert!(flagged);
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(0, 3), 4.0);
    }

    #[test]
    fn from_parts_checks_invariants() {
        let f = Tensor::zeros(3, 2);
        let a = path_adjacency(3);
        let d = shortest_path_matrix(&a).unwrap();
        let mut bad_d = d.clone();
        bad_d.set(0, 2, 5.0);
        assert!(matches!(
            Graph::from_parts(f.clone(), a.clone(), bad_d, uniform_weights(3), None),
            Err(GraphError::NotSymmetric("connectivity", 0, 2))
        ));
        assert!(matches!(
            Graph::from_parts(f.clone(), a.clone(), d.clone(), vec![0.5, 0.5, 0.1], None),
            Err(GraphError::BadWeights(_))
        ));
        assert!(matches!(
            Graph::from_parts(f.clone(), a.clone(), d.clone(), uniform_weights(3), Some(vec![1])),
            Err(GraphError::Size { what: "labels", .. })
        ));
        let g = Graph::from_parts(f, a, d, uniform_weights(3), Some(vec![1, 1, 2])).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn permutation_moves_everything() {
        let f = Tensor::from_fn(3, 1, |i, _| i as f64);
        let g = Graph::from_edges(f, &[(0, 1), (1, 2)], Some(vec![7, 8, 9])).unwrap();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.features().data(), &[2.0, 0.0, 1.0]);
        assert_eq!(p.labels().unwrap(), &[9, 7, 8]);
        assert_eq!(p.connectivity().get(0, 1), 2.0);
    }
}
