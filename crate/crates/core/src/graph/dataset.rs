//! Graph corpora and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, load_graph, sample_params, save_graph, sbm_generate, Graph, GraphError, Result, SbmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    /// Cluster set, e.g. `"1,2"`.
    pub clusters: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub configs: Vec<SbmConfig>,
    pub graphs: Vec<ManifestEntry>,
}

/// A set of graphs with their cluster-set kinds.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub kinds: Vec<String>,
    pub seeds: Vec<u64>,
    pub configs: Vec<SbmConfig>,
    pub seed: u64,
}

/// A pair of dataset graphs with the loss parameters to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub g1: usize,
    pub g2: usize,
    pub alpha: f64,
    pub rho: f64,
}

/// Generates `count` SBM graphs, cycling through `configs`; graph `i` is
/// drawn with `derive_seed(seed, i)`.
pub fn generate_corpus(configs: &[SbmConfig], count: usize, seed: u64) -> Result<Dataset> {
    if configs.is_empty() {
        return Err(GraphError::Config("no SBM configurations given".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let items: Vec<(Graph, String, u64)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let cfg = &configs[i % configs.len()];
            let s = derive_seed(seed, i as u64);
            sbm_generate(cfg, s).map(|g| (g, cfg.kind(), s))
        })
        .collect::<Result<_>>()?;
    let mut graphs = Vec::with_capacity(count);
    let mut kinds = Vec::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    for (g, k, s) in items {
        graphs.push(g);
        kinds.push(k);
        seeds.push(s);
    }
    Ok(Dataset {
        graphs,
        kinds,
        seeds,
        configs: configs.to_vec(),
        seed,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Writes `graph_00000.json`, ... and `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| GraphError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, g) in self.graphs.iter().enumerate() {
            let name = format!("graph_{i:05}.json");
            save_graph(g, dir.join(&name))?;
            entries.push(ManifestEntry {
                path: name,
                clusters: self.kinds[i].clone(),
                seed: self.seeds[i],
            });
        }
        let manifest = Manifest {
            format_version: 1,
            seed: self.seed,
            configs: self.configs.clone(),
            graphs: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization") + "\n";
        fs::write(&path, text).map_err(|source| GraphError::Io { path, source })?;
        Ok(manifest)
    }

    /// Indices of graphs whose kind equals `kind`.
    pub fn indices_of(&self, kind: &str) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| k.as_str() == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// `count` random ordered pairs of distinct graphs with sampled
    /// `(alpha, rho)`.
    pub fn random_pairs(&self, count: usize, seed: u64) -> Vec<PairSample> {
        assert!(self.len() >= 2, "need at least two graphs to form pairs");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let g1 = rng.random_range(0..self.len());
                let mut g2 = rng.random_range(0..self.len() - 1);
                if g2 >= g1 {
                    g2 += 1;
                }
                let (alpha, rho) = sample_params(&mut rng);
                PairSample { g1, g2, alpha, rho }
            })
            .collect()
    }
}

/// Loads a manifest and every graph it lists.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|source| GraphError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| GraphError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(PathBuf::new);
    let graphs = manifest
        .graphs
        .iter()
        .map(|e| load_graph(base.join(&e.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        graphs,
        kinds: manifest.graphs.iter().map(|e| e.clusters.clone()).collect(),
        seeds: manifest.graphs.iter().map(|e| e.seed).collect(),
        configs: manifest.configs,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_corpus_round_trip() {
        let configs = [SbmConfig::with_clusters(&[1, 2]), SbmConfig::with_clusters(&[2, 3])];
        let ds = generate_corpus(&configs, 4, 7).unwrap();
        assert_eq!(ds.kinds, vec!["1,2", "2,3", "1,2", "2,3"]);
        let dir = tempfile::tempdir().unwrap();
        let manifest = ds.write(dir.path()).unwrap();
        assert_eq!(manifest.graphs.len(), 4);
        let back = load_dataset(dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.graphs, ds.graphs);
        assert_eq!(back.kinds, ds.kinds);
        assert_eq!(back.indices_of("2,3"), vec![1, 3]);
    }

    #[test]
    fn pairs_are_distinct_and_seeded() {
        let ds = generate_corpus(&[SbmConfig::default().with_nodes(10, 12)], 3, 1).unwrap();
        let a = ds.random_pairs(50, 4);
        assert_eq!(a, ds.random_pairs(50, 4));
        assert!(a.iter().all(|p| p.g1 != p.g2 && p.g1 < 3 && p.g2 < 3));
        assert!(a.iter().all(|p| (0.0..=1.0).contains(&p.alpha) && p.rho >= 1e-7 && p.rho <= 1.0));
    }
}
