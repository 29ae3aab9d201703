//! Stochastic block model graphs with up to three chained clusters.
//!
//! Cluster `c` has one-hot feature `e_c` in three dimensions plus centered
//! Gaussian noise. Edges are drawn inside a cluster with `p_intra` and between
//! clusters `c` and `c + 1` with `p_adjacent`; clusters 1 and 3 are never
//! linked directly.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{connected_components, Graph, GraphError, Result};
use crate::tensor::Tensor;

const MAX_RETRIES: usize = 20;
pub const FEATURE_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    /// Cluster ids present, a subset of `{1, 2, 3}`.
    pub clusters: Vec<usize>,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub p_intra: f64,
    pub p_adjacent: f64,
    pub noise_std: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            clusters: vec![1, 2, 3],
            nodes_min: 30,
            nodes_max: 60,
            p_intra: 0.6,
            p_adjacent: 0.08,
            noise_std: 0.1,
        }
    }
}

impl SbmConfig {
    pub fn with_clusters(clusters: &[usize]) -> Self {
        Self {
            clusters: clusters.to_vec(),
            ..Self::default()
        }
    }

    pub fn with_nodes(mut self, min: usize, max: usize) -> Self {
        self.nodes_min = min;
        self.nodes_max = max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GraphError::Config(m));
        if self.clusters.is_empty() {
            return bad("no clusters".into());
        }
        let mut sorted = self.clusters.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.clusters.len() || sorted.iter().any(|c| !(1..=3).contains(c)) {
            return bad(format!("clusters {:?} must be distinct values in 1..=3", self.clusters));
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_adjacent", self.p_adjacent)] {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("{name} = {p} outside (0, 1]"));
            }
        }
        if self.nodes_min < 2 * self.clusters.len() {
            return bad(format!(
                "nodes_min = {} leaves fewer than 2 nodes per cluster",
                self.nodes_min
            ));
        }
        if self.nodes_min > self.nodes_max {
            return bad(format!("nodes_min {} > nodes_max {}", self.nodes_min, self.nodes_max));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std = {}", self.noise_std));
        }
        Ok(())
    }

    /// Cluster list as `"1,2,3"`.
    pub fn kind(&self) -> String {
        cluster_key(&self.clusters)
    }
}

/// Canonical textual form of a cluster set.
pub fn cluster_key(clusters: &[usize]) -> String {
    let mut c = clusters.to_vec();
    c.sort_unstable();
    c.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Draws one connected SBM graph. Node labels are the cluster ids; nodes
/// are ordered by cluster.
pub fn sbm_generate(config: &SbmConfig, seed: u64) -> Result<Graph> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters = config.clusters.clone();
    clusters.sort_unstable();
    let k = clusters.len();

    let n = rng.random_range(config.nodes_min..=config.nodes_max);
    let mut sizes = vec![2usize; k];
    for _ in 0..n - 2 * k {
        sizes[rng.random_range(0..k)] += 1;
    }
    let labels: Vec<usize> = clusters
        .iter()
        .zip(&sizes)
        .flat_map(|(&c, &s)| std::iter::repeat_n(c, s))
        .collect();

    let mut adjacency = Tensor::zeros(n, n);
    for _ in 0..MAX_RETRIES {
        adjacency = Tensor::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let p = match labels[i].abs_diff(labels[j]) {
                    0 => config.p_intra,
                    1 => config.p_adjacent,
                    _ => 0.0,
                };
                if p > 0.0 && rng.random::<f64>() < p {
                    adjacency.set(i, j, 1.0);
                    adjacency.set(j, i, 1.0);
                }
            }
        }
        if connected_components(&adjacency).len() == 1 {
            break;
        }
    }
    bridge_components(&mut adjacency, &labels, &mut rng);

    let noise = Normal::new(0.0, config.noise_std).map_err(|e| GraphError::Config(e.to_string()))?;
    let features = Tensor::from_fn(n, FEATURE_DIM, |i, d| {
        let onehot = if labels[i] == d + 1 { 1.0 } else { 0.0 };
        let eps = if config.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        onehot + eps
    });

    let edges = {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if adjacency.get(i, j) != 0.0 {
                    e.push((i, j));
                }
            }
        }
        e
    };
    Graph::from_edges(features, &edges, Some(labels))
}

/// Joins components with single edges between the nodes whose clusters are
/// closest, until the graph is connected.
fn bridge_components(adjacency: &mut Tensor, labels: &[usize], rng: &mut ChaCha8Rng) {
    loop {
        let comps = connected_components(adjacency);
        if comps.len() <= 1 {
            return;
        }
        let (main, rest) = (&comps[0], &comps[1..]);
        let mut best = usize::MAX;
        let mut candidates = Vec::new();
        for other in rest {
            for &u in main {
                for &v in other {
                    let gap = labels[u].abs_diff(labels[v]);
                    if gap < best {
                        best = gap;
                        candidates.clear();
                    }
                    if gap == best {
                        candidates.push((u, v));
                    }
                }
            }
        }
        let &(u, v) = candidates.choose(rng).expect("at least two components");
        adjacency.set(u, v, 1.0);
        adjacency.set(v, u, 1.0);
    }
}
