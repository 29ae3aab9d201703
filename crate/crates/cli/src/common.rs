use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ulot::graph::{load_dataset, load_graph, Dataset, Graph};
use ulot::model::{load_weights, ModelConfig, ModelWeights};
use ulot::solvers::{SolverConfig, SolverKind};
use ulot::train::TrainConfig;

use crate::error::{CliError, Result};
use crate::output::read_file;

pub const DATA_DIR_VAR: &str = "ULOT_DATA_DIR";

/// Settings file shared by the commands: `{"model": .., "train": ..,
/// "solver": ..}`, every section and field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_file(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

/// The manifest named on the command line, or the one in `$ULOT_DATA_DIR`.
/// A directory stands for its `manifest.json`.
pub fn manifest_path(arg: Option<&Path>) -> Result<PathBuf> {
    let base = match arg {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(DATA_DIR_VAR)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Input(format!("no --dataset given and {DATA_DIR_VAR} is not set")))?,
    };
    Ok(if base.is_dir() { base.join("manifest.json") } else { base })
}

pub fn dataset(arg: Option<&Path>) -> Result<Dataset> {
    let path = manifest_path(arg)?;
    Ok(load_dataset(path)?)
}

/// Output directory from the flag or `$ULOT_DATA_DIR`.
pub fn data_out_dir(arg: Option<&Path>) -> Result<PathBuf> {
    match arg {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os(DATA_DIR_VAR)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Input(format!("no --out given and {DATA_DIR_VAR} is not set"))),
    }
}

pub fn graph(path: &Path) -> Result<Graph> {
    Ok(load_graph(path)?)
}

pub fn weights(path: &Path) -> Result<ModelWeights> {
    Ok(load_weights(path, None)?)
}

pub fn parse_clusters(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|c| c.trim().parse::<usize>().map_err(|_| format!("bad cluster id {c:?} in {s:?}")))
        .collect()
}

pub fn parse_solver(s: &str) -> std::result::Result<SolverKind, String> {
    s.parse().map_err(|e: ulot::solvers::SolverError| e.to_string())
}

/// `(alpha, rho)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<(f64, f64)>);

/// `alpha:rho` pairs separated by commas.
pub fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    s.split(',')
        .filter(|c| !c.trim().is_empty())
        .map(|cell| {
            let (a, r) = cell
                .split_once(':')
                .ok_or_else(|| format!("grid cell {cell:?} is not alpha:rho"))?;
            let a: f64 = a.trim().parse().map_err(|_| format!("bad alpha in {cell:?}"))?;
            let r: f64 = r.trim().parse().map_err(|_| format!("bad rho in {cell:?}"))?;
            Ok((a, r))
        })
        .collect::<std::result::Result<_, String>>()
        .map(Grid)
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .filter(|c| !c.trim().is_empty())
        .map(|c| c.trim().parse().map_err(|_| format!("bad list item {c:?}")))
        .collect()
}

/// Solver flags shared by several commands; unset flags keep the value
/// from the settings file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SolverArgs {
    /// mm, ibpp, sinkhorn or boxqn
    #[arg(long, value_parser = parse_solver)]
    pub solver: Option<SolverKind>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub max_inner: Option<usize>,
    #[arg(long)]
    pub outer_tol: Option<f64>,
}

impl SolverArgs {
    pub fn apply(&self, mut cfg: SolverConfig) -> SolverConfig {
        if let Some(k) = self.solver {
            cfg.kind = k;
        }
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        if let Some(v) = self.max_outer {
            cfg.max_outer = v;
        }
        if let Some(v) = self.max_inner {
            cfg.max_inner = v;
        }
        if let Some(v) = self.outer_tol {
            cfg.outer_tol = v;
        }
        cfg
    }
}
