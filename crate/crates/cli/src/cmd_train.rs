use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use ulot::fugw::FugwParams;
use ulot::graph::PairSample;
use ulot::model::{save_weights, ModelError};
use ulot::solvers::{solve_fugw, SolverKind};
use ulot::train::{pair_loss, pearson, train, train_from, Checkpoint, EpochMetrics, PairDataset};

use crate::common::{dataset, parse_grid, Grid, weights, RunConfig, SolverArgs};
use crate::error::{CliError, Result};
use crate::output::{create_dir, numeric_column, opt, read_table, write_json, Table};

#[derive(Debug, clap::Args)]
pub struct Train {
    /// Manifest or dataset directory; defaults to `$ULOT_DATA_DIR`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random pairs drawn from the dataset.
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long)]
    pub gcn_hidden: Option<usize>,
    #[arg(long)]
    pub alpha_dim: Option<usize>,
    /// Epochs between checkpoints.
    #[arg(long, default_value_t = 1)]
    pub checkpoint_interval: usize,
    /// Continue from a `checkpoint.json`; `--epochs` then counts further
    /// epochs.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Directory for weights, checkpoints and `metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

impl Train {
    fn model_flags_given(&self) -> bool {
        self.layers.is_some()
            || self.embed_dim.is_some()
            || self.mlp_hidden.is_some()
            || self.gcn_hidden.is_some()
            || self.alpha_dim.is_some()
    }
}

fn metrics_table(rows: &[EpochMetrics]) -> Table {
    let mut t = Table::new(["epoch", "train_loss", "val_loss", "time_s", "skipped_batches"]);
    for m in rows {
        t.push([
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.val_loss.to_string(),
            m.time_s.to_string(),
            m.skipped_batches.to_string(),
        ]);
    }
    t
}

pub fn run_train(args: &Train) -> Result<()> {
    let file = RunConfig::load(args.config.as_deref())?;
    let model_explicit = file.model.is_some() || args.model_flags_given();
    let mut model = file.model.clone().unwrap_or_default();
    model.layers = args.layers.unwrap_or(model.layers);
    model.embed_dim = args.embed_dim.unwrap_or(model.embed_dim);
    model.mlp_hidden = args.mlp_hidden.unwrap_or(model.mlp_hidden);
    model.gcn_hidden = args.gcn_hidden.unwrap_or(model.gcn_hidden);
    model.alpha_dim = args.alpha_dim.unwrap_or(model.alpha_dim);
    let mut cfg = file.train.clone();
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = args.lr.unwrap_or(cfg.learning_rate);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.val_fraction = args.val_fraction.unwrap_or(cfg.val_fraction);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.checkpoint_interval = args.checkpoint_interval;
    cfg.checkpoint_dir = Some(args.out.clone());

    let data = dataset(args.dataset.as_deref())?;
    if data.len() < 2 {
        return Err(CliError::Input("the dataset needs at least two graphs".into()));
    }
    let pairs = data.random_pairs(args.pairs, cfg.seed);
    let pair_data = PairDataset::new(data.graphs, pairs)?;
    create_dir(&args.out)?;

    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(ck) = &resume {
        if model_explicit {
            model.check_matches(ck.weights.config())?;
        }
        model = ck.weights.config().clone();
    }
    model.validate()?;
    if let Some(input) = pair_data.graphs.first().map(|g| g.dim()) {
        if input != model.input_dim {
            return Err(ModelError::InputDim {
                expected: model.input_dim,
                found: input,
            }
            .into());
        }
    }
    write_json(
        &args.out.join("config.json"),
        &RunConfig {
            model: Some(model.clone()),
            train: cfg.clone(),
            solver: file.solver.clone(),
        },
    )?;

    let mut history: Vec<EpochMetrics> = resume.as_ref().map(|ck| ck.metrics.epochs.clone()).unwrap_or_default();
    let metrics_path = args.out.join("metrics.csv");
    let mut write_error = None;
    let mut on_epoch = |m: &EpochMetrics| {
        history.push(m.clone());
        println!("epoch {} train {:.6} val {:.6} ({:.1}s)", m.epoch, m.train_loss, m.val_loss, m.time_s);
        if write_error.is_none() {
            write_error = metrics_table(&history).write(&metrics_path).err();
        }
    };
    let outcome = match resume {
        Some(ck) => train_from(&pair_data, ck.weights, Some((ck.optimizer, ck.metrics)), &cfg, &mut on_epoch)?,
        None => train(&pair_data, &model, &cfg, &mut on_epoch)?,
    };
    if let Some(e) = write_error {
        return Err(e);
    }
    metrics_table(&outcome.metrics.epochs).write(&metrics_path)?;
    let save = |w, name: &str| {
        let path = args.out.join(name);
        save_weights(w, &path).map_err(|e| match e {
            ModelError::Io(source) => CliError::Write { path, source },
            e => e.into(),
        })
    };
    save(&outcome.best, "weights.json")?;
    save(&outcome.last, "last.json")?;
    println!(
        "best validation loss {} at epoch {}",
        outcome.metrics.best_val_loss, outcome.metrics.best_epoch
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct Eval {
    #[arg(long, required_unless_present = "from")]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `alpha:rho` cells evaluated on every pair; by default each pair uses
    /// its own sampled parameters.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip the solver and report ULOT losses only.
    #[arg(long)]
    pub no_solver: bool,
    /// Correlate two columns of an existing table instead of evaluating.
    #[arg(long, conflicts_with_all = ["weights", "grid"])]
    pub from: Option<PathBuf>,
    #[arg(long, default_value = "ulot_loss")]
    pub x: String,
    #[arg(long, default_value = "solver_loss")]
    pub y: String,
    /// Directory for `eval.csv` and `summary.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pearson correlation over the rows where both values are finite.
fn correlate(x: &[f64], y: &[f64]) -> (Option<f64>, usize) {
    let (fx, fy): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    (pearson(&fx, &fy), fx.len())
}

pub fn run_eval(args: &Eval) -> Result<()> {
    if let Some(from) = &args.from {
        let (header, rows) = read_table(from)?;
        let x = numeric_column(&header, &rows, &args.x)?;
        let y = numeric_column(&header, &rows, &args.y)?;
        let (r, n) = correlate(&x, &y);
        println!("pearson({}, {}) = {} over {n} rows", args.x, args.y, opt(r));
        if let Some(out) = &args.out {
            create_dir(out)?;
            write_json(
                &out.join("summary.json"),
                &json!({"x": args.x, "y": args.y, "pearson": r, "rows": n, "source": from}),
            )?;
        }
        return Ok(());
    }
    let w = weights(args.weights.as_deref().expect("clap requires weights"))?;
    let solver_cfg = args.solver.apply({
        let mut s = RunConfig::load(args.config.as_deref())?.solver;
        if args.solver.solver.is_none() && args.config.is_none() {
            s.kind = SolverKind::Ibpp;
        }
        s
    });
    let data = dataset(args.dataset.as_deref())?;
    let pairs = data.random_pairs(args.pairs, args.seed);
    let cells: Vec<(usize, PairSample)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(k, p)| match &args.grid {
            Some(grid) => grid.0.iter().map(|&(alpha, rho)| (k, PairSample { alpha, rho, ..*p })).collect(),
            None => vec![(k, *p)],
        })
        .collect();
    struct Row {
        ulot: std::result::Result<(f64, f64), String>,
        solver: Option<std::result::Result<(f64, f64), String>>,
    }
    let rows: Vec<Row> = cells
        .par_iter()
        .map(|(_, p)| {
            let (g1, g2) = (&data.graphs[p.g1], &data.graphs[p.g2]);
            let started = Instant::now();
            let ulot = pair_loss(&w, g1, g2, p.alpha, p.rho)
                .map(|l| (l, started.elapsed().as_secs_f64() * 1e3))
                .map_err(|e| e.to_string());
            let solver = (!args.no_solver).then(|| {
                FugwParams::new(p.alpha, p.rho)
                    .map_err(|e| e.to_string())
                    .and_then(|params| solve_fugw(g1, g2, &params, &solver_cfg, None).map_err(|e| e.to_string()))
                    .map(|r| (r.loss(), r.time_ms))
            });
            Row { ulot, solver }
        })
        .collect();

    let mut table = Table::new([
        "pair",
        "g1",
        "g2",
        "alpha",
        "rho",
        "ulot_loss",
        "solver_loss",
        "ulot_time_ms",
        "solver_time_ms",
        "error",
    ]);
    table.note(format!("solver {}", if args.no_solver { "none".into() } else { solver_cfg.kind.to_string() }));
    let (mut xs, mut ys, mut failed) = (Vec::new(), Vec::new(), 0);
    for ((k, p), row) in cells.iter().zip(&rows) {
        let ulot = row.ulot.as_ref().ok();
        let solver = row.solver.as_ref().and_then(|s| s.as_ref().ok());
        let error: Vec<&str> = [row.ulot.as_ref().err(), row.solver.as_ref().and_then(|s| s.as_ref().err())]
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect();
        failed += usize::from(!error.is_empty());
        xs.push(ulot.map_or(f64::NAN, |u| u.0));
        ys.push(solver.map_or(f64::NAN, |s| s.0));
        table.push([
            k.to_string(),
            p.g1.to_string(),
            p.g2.to_string(),
            p.alpha.to_string(),
            p.rho.to_string(),
            opt(ulot.map(|u| u.0)),
            opt(solver.map(|s| s.0)),
            opt(ulot.map(|u| u.1)),
            opt(solver.map(|s| s.1)),
            error.join(" | "),
        ]);
    }
    let (r, n) = correlate(&xs, &ys);
    if let Some(out) = &args.out {
        create_dir(out)?;
        table.write(&out.join("eval.csv"))?;
        write_json(
            &out.join("summary.json"),
            &json!({"pearson": r, "rows": n, "cells": cells.len(), "failed": failed, "solver": solver_cfg.kind}),
        )?;
    }
    println!("pearson(ulot_loss, solver_loss) = {} over {n} cells", opt(r));
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: cells.len(),
        });
    }
    Ok(())
}

