use std::path::PathBuf;

use ulot::graph::{generate_corpus, GraphError, SbmConfig};

use crate::common::{data_out_dir, parse_clusters};
use crate::error::{CliError, Result};

#[derive(Debug, clap::Args)]
pub struct GenSbm {
    /// Cluster set per graph type, e.g. `1,2`; repeat for a mixed corpus
    /// (graphs cycle through the types).
    #[arg(long, value_parser = clusters_arg, default_value = "1,2,3")]
    pub clusters: Vec<Clusters>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub nodes_min: Option<usize>,
    #[arg(long)]
    pub nodes_max: Option<usize>,
    #[arg(long)]
    pub p_intra: Option<f64>,
    #[arg(long)]
    pub p_adjacent: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to `$ULOT_DATA_DIR`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Clusters(pub Vec<usize>);

fn clusters_arg(s: &str) -> std::result::Result<Clusters, String> {
    parse_clusters(s).map(Clusters)
}

pub fn run(args: &GenSbm) -> Result<()> {
    let configs: Vec<SbmConfig> = args
        .clusters
        .iter()
        .map(|c| {
            let mut cfg = SbmConfig::with_clusters(&c.0);
            cfg.nodes_min = args.nodes_min.unwrap_or(cfg.nodes_min);
            cfg.nodes_max = args.nodes_max.unwrap_or(cfg.nodes_max);
            cfg.p_intra = args.p_intra.unwrap_or(cfg.p_intra);
            cfg.p_adjacent = args.p_adjacent.unwrap_or(cfg.p_adjacent);
            cfg.noise_std = args.noise_std.unwrap_or(cfg.noise_std);
            cfg
        })
        .collect();
    let out = data_out_dir(args.out.as_deref())?;
    let data = generate_corpus(&configs, args.count, args.seed)?;
    data.write(&out).map_err(|e| match e {
        GraphError::Io { path, source } => CliError::Write { path, source },
        e => e.into(),
    })?;
    println!("wrote {} graphs and manifest.json to {}", data.len(), out.display());
    Ok(())
}
