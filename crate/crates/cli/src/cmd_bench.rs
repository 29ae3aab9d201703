use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use ulot::bench::{
    fill_loss_errors, iterations_to_within, loglog_slope, median, quantile, timed, warm_start, BenchRecord,
};
use ulot::fugw::{FugwParams, FugwProblem};
use ulot::graph::{derive_seed, sbm_generate, Graph, PairSample, SbmConfig};
use ulot::model::{predict_plan, ModelConfig, ModelWeights};
use ulot::solvers::{solve_problem, SolverConfig, SolverKind};

use crate::common::{dataset, parse_grid, parse_list, weights, Grid, RunConfig, SolverArgs};
use crate::error::{CliError, Result};
use crate::output::{create_dir, opt, write_json, Table};

const TIMING_NOTE: &str =
    "timing: median of repeats on a monotonic clock, cost matrices included, file I/O excluded";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Ulot,
    Solver(SolverKind),
    /// The solver started from the predicted plan; timed end to end.
    IbppWarm,
}

impl Method {
    fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "ulot" => Ok(Self::Ulot),
            "ibpp-warm" => Ok(Self::IbppWarm),
            other => other.parse().map(Self::Solver).map_err(|_| {
                CliError::Input(format!(
                    "unknown method {other:?} (expected ulot, mm, ibpp, sinkhorn, boxqn or ibpp-warm)"
                ))
            }),
        }
    }

    fn name(self) -> String {
        match self {
            Self::Ulot => "ulot".into(),
            Self::Solver(k) => k.to_string(),
            Self::IbppWarm => "ibpp-warm".into(),
        }
    }

    fn needs_weights(self) -> bool {
        matches!(self, Self::Ulot | Self::IbppWarm)
    }
}

/// Loss and outer iterations of one run.
fn run_method(
    method: Method,
    g1: &Graph,
    g2: &Graph,
    params: &FugwParams,
    weights: Option<&ModelWeights>,
    solver: &SolverConfig,
) -> std::result::Result<(f64, usize), String> {
    let problem = FugwProblem::new(g1, g2).map_err(|e| e.to_string())?;
    let w = || weights.ok_or_else(|| "no weights given".to_string());
    match method {
        Method::Ulot => {
            let plan = predict_plan(g1, g2, params.alpha, params.rho, w()?).map_err(|e| e.to_string())?;
            let loss = problem.loss(plan.plan(), params.alpha, params.rho).map_err(|e| e.to_string())?;
            Ok((loss, 0))
        }
        Method::Solver(kind) => {
            let cfg = SolverConfig { kind, ..solver.clone() };
            let r = solve_problem(&problem, params, &cfg, None).map_err(|e| e.to_string())?;
            Ok((r.loss(), r.iters()))
        }
        Method::IbppWarm => {
            let plan = predict_plan(g1, g2, params.alpha, params.rho, w()?).map_err(|e| e.to_string())?;
            let cfg = SolverConfig {
                kind: SolverKind::Ibpp,
                ..solver.clone()
            };
            let r = solve_problem(&problem, params, &cfg, Some(plan.plan())).map_err(|e| e.to_string())?;
            Ok((r.loss(), r.iters()))
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Bench {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Required by the `ulot` and `ibpp-warm` methods.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Comma-separated: ulot, mm, ibpp, sinkhorn, boxqn, ibpp-warm.
    #[arg(long, default_value = "ulot,mm,ibpp,sinkhorn,boxqn,ibpp-warm")]
    pub methods: String,
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long, value_parser = parse_grid, default_value = "0.5:0.01,0.5:0.1,0.5:1")]
    pub grid: Grid,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Graph sizes for the scaling table, e.g. `50,100,200,400`; empty
    /// skips it.
    #[arg(long, default_value = "")]
    pub sizes: String,
    /// Outer iterations of every solver in the scaling runs, which never
    /// stop early on tolerance.
    #[arg(long, default_value_t = 10)]
    pub scaling_outer: usize,
    #[arg(long, default_value_t = 10)]
    pub scaling_inner: usize,
    #[arg(long, default_value_t = 3)]
    pub scaling_repeats: usize,
    #[arg(long, default_value_t = 0.5)]
    pub scaling_alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub scaling_rho: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub seed: u64,
    /// Directory for `bench.csv`, `scaling.csv`, `slopes.csv` and
    /// `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_bench(args: &Bench) -> Result<()> {
    let methods = args.methods.split(',').map(Method::parse).collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(CliError::Input("no methods given".into()));
    }
    let w = args.weights.as_deref().map(weights).transpose()?;
    if w.is_none() && methods.iter().any(|m| m.needs_weights()) {
        return Err(CliError::Input("the ulot and ibpp-warm methods need --weights".into()));
    }
    let solver_cfg = args.solver.apply(RunConfig::load(args.config.as_deref())?.solver);
    let sizes: Vec<usize> = parse_list(&args.sizes).map_err(CliError::Input)?;
    create_dir(&args.out)?;

    let mut failed = 0;
    let mut total = 0;
    if args.pairs > 0 {
        let data = dataset(args.dataset.as_deref())?;
        let cells: Vec<(usize, PairSample, Method)> = data
            .random_pairs(args.pairs, args.seed)
            .into_iter()
            .enumerate()
            .flat_map(|(k, p)| {
                let methods = &methods;
                args.grid.0.iter().flat_map(move |&(alpha, rho)| {
                    methods.iter().map(move |&m| (k, PairSample { alpha, rho, ..p }, m))
                })
            })
            .collect();
        let results: Vec<(BenchRecord, Option<String>)> = cells
            .par_iter()
            .map(|&(k, p, method)| {
                let (g1, g2) = (&data.graphs[p.g1], &data.graphs[p.g2]);
                let outcome = FugwParams::new(p.alpha, p.rho).map_err(|e| e.to_string()).and_then(|params| {
                    let (out, t, sd) = timed(args.repeats, || run_method(method, g1, g2, &params, w.as_ref(), &solver_cfg));
                    out.map(|(loss, iters)| (loss, iters, t, sd))
                });
                let (loss, iterations, time_ms, time_std_ms, error) = match outcome {
                    Ok((l, i, t, sd)) => (l, i, t, sd, None),
                    Err(e) => (f64::NAN, 0, f64::NAN, f64::NAN, Some(e)),
                };
                let record = BenchRecord {
                    pair: k,
                    method: method.name(),
                    n1: g1.n(),
                    n2: g2.n(),
                    alpha: p.alpha,
                    rho: p.rho,
                    loss,
                    loss_error: f64::NAN,
                    time_ms,
                    time_std_ms,
                    iterations,
                };
                (record, error)
            })
            .collect();
        let (mut records, errors): (Vec<BenchRecord>, Vec<Option<String>>) = results.into_iter().unzip();
        fill_loss_errors(&mut records);
        total += records.len();
        failed += errors.iter().filter(|e| e.is_some()).count();

        let mut table = Table::new([
            "pair",
            "method",
            "n1",
            "n2",
            "alpha",
            "rho",
            "loss",
            "loss_error",
            "time_ms",
            "time_std_ms",
            "iterations",
            "error",
        ]);
        table.note(TIMING_NOTE).note(format!("repeats {}", args.repeats));
        for (r, e) in records.iter().zip(&errors) {
            table.push([
                r.pair.to_string(),
                r.method.clone(),
                r.n1.to_string(),
                r.n2.to_string(),
                r.alpha.to_string(),
                r.rho.to_string(),
                r.loss.to_string(),
                r.loss_error.to_string(),
                r.time_ms.to_string(),
                r.time_std_ms.to_string(),
                r.iterations.to_string(),
                e.clone().unwrap_or_default(),
            ]);
        }
        table.write(&args.out.join("bench.csv"))?;

        let summary: Vec<_> = methods
            .iter()
            .map(|m| {
                let mine: Vec<&BenchRecord> = records.iter().filter(|r| r.method == m.name()).collect();
                let errs: Vec<f64> = mine.iter().map(|r| r.loss_error).collect();
                let times: Vec<f64> = mine.iter().map(|r| r.time_ms).collect();
                json!({
                    "method": m.name(),
                    "cells": mine.len(),
                    "median_loss_error": median(&errs),
                    "median_time_ms": median(&times),
                })
            })
            .collect();
        write_json(&args.out.join("summary.json"), &json!({ "methods": summary, "failed": failed }))?;
    }

    if !sizes.is_empty() {
        let (s_failed, s_total) = scaling(args, &methods, w.as_ref(), &solver_cfg, &sizes)?;
        failed += s_failed;
        total += s_total;
    }
    println!("wrote benchmark tables to {}", args.out.display());
    if failed > 0 {
        return Err(CliError::Partial { failed, total });
    }
    Ok(())
}

/// Times each method on one random pair per size and fits `time ~ n^k`.
fn scaling(
    args: &Bench,
    methods: &[Method],
    weights: Option<&ModelWeights>,
    solver: &SolverConfig,
    sizes: &[usize],
) -> Result<(usize, usize)> {
    let fallback;
    let weights = match weights {
        Some(w) => w,
        None => {
            fallback = ModelWeights::init(&ModelConfig::default(), args.seed)?;
            &fallback
        }
    };
    let fixed = SolverConfig {
        max_outer: args.scaling_outer,
        max_inner: args.scaling_inner,
        outer_tol: f64::MIN_POSITIVE,
        inner_tol: f64::MIN_POSITIVE,
        ..solver.clone()
    };
    let params = FugwParams::new(args.scaling_alpha, args.scaling_rho)?;
    let mut table = Table::new(["method", "n", "time_ms", "time_std_ms", "iterations", "error"]);
    table
        .note(TIMING_NOTE)
        .note(format!(
            "repeats {}; solvers run {} outer x {} inner iterations",
            args.scaling_repeats, args.scaling_outer, args.scaling_inner
        ));
    let mut points: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let (mut failed, mut total) = (0, 0);
    for (k, &n) in sizes.iter().enumerate() {
        let cfg = SbmConfig::default().with_nodes(n, n);
        let g1 = sbm_generate(&cfg, derive_seed(args.seed, 2 * k as u64))?;
        let g2 = sbm_generate(&cfg, derive_seed(args.seed, 2 * k as u64 + 1))?;
        // timings run one at a time so they do not compete for cores
        for &m in methods.iter().filter(|m| **m != Method::IbppWarm) {
            let (out, t, sd) = timed(args.scaling_repeats, || run_method(m, &g1, &g2, &params, Some(weights), &fixed));
            total += 1;
            let (iters, error) = match out {
                Ok((_, i)) => (i, String::new()),
                Err(e) => {
                    failed += 1;
                    (0, e)
                }
            };
            if error.is_empty() {
                match points.iter_mut().find(|(name, _)| *name == m.name()) {
                    Some((_, p)) => p.push((n as f64, t)),
                    None => points.push((m.name(), vec![(n as f64, t)])),
                }
            }
            table.push([m.name(), n.to_string(), t.to_string(), sd.to_string(), iters.to_string(), error]);
        }
    }
    table.write(&args.out.join("scaling.csv"))?;
    let mut slopes = Table::new(["method", "slope", "sizes"]);
    slopes.note("least-squares slope of ln time against ln n");
    for (name, p) in &points {
        slopes.push([name.clone(), opt(loglog_slope(p)), p.len().to_string()]);
    }
    slopes.write(&args.out.join("slopes.csv"))?;
    Ok((failed, total))
}

#[derive(Debug, clap::Args)]
pub struct WarmstartBench {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// `rho` is drawn log-uniformly from `[rho_min, rho_max]` per pair.
    #[arg(long, default_value_t = 1e-2)]
    pub rho_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho_max: f64,
    /// Tolerance relative to the final loss of the uniform start.
    #[arg(long, default_value_t = 0.01)]
    pub rel: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    /// Directory for `traces.csv`, `bands.csv`, `pairs.csv` and
    /// `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Pairs for the warm-start comparison: random distinct graphs at a fixed
/// `alpha` with log-uniform `rho`.
pub fn warm_pairs(n_graphs: usize, count: usize, alpha: f64, rho_range: (f64, f64), seed: u64) -> Vec<PairSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (rho_range.0.ln(), rho_range.1.ln());
    (0..count)
        .map(|_| {
            let g1 = rng.random_range(0..n_graphs);
            let mut g2 = rng.random_range(0..n_graphs - 1);
            if g2 >= g1 {
                g2 += 1;
            }
            let rho = (lo + (hi - lo) * rng.random::<f64>()).exp();
            PairSample { g1, g2, alpha, rho }
        })
        .collect()
}

pub fn run_warmstart(args: &WarmstartBench) -> Result<()> {
    if !(args.rho_min > 0.0 && args.rho_min <= args.rho_max) {
        return Err(CliError::Input("need 0 < rho_min <= rho_max".into()));
    }
    let w = weights(&args.weights)?;
    let solver_cfg = args.solver.apply({
        let mut s = RunConfig::load(args.config.as_deref())?.solver;
        if args.solver.solver.is_none() && args.config.is_none() {
            s.kind = SolverKind::Ibpp;
        }
        s
    });
    let data = dataset(args.dataset.as_deref())?;
    if data.len() < 2 {
        return Err(CliError::Input("the dataset needs at least two graphs".into()));
    }
    let pairs = warm_pairs(data.len(), args.pairs, args.alpha, (args.rho_min, args.rho_max), args.seed);
    create_dir(&args.out)?;
    let runs: Vec<std::result::Result<ulot::bench::WarmStart, String>> = pairs
        .par_iter()
        .map(|p| {
            let params = FugwParams::new(p.alpha, p.rho).map_err(|e| e.to_string())?;
            warm_start(&data.graphs[p.g1], &data.graphs[p.g2], &params, &w, &solver_cfg).map_err(|e| e.to_string())
        })
        .collect();

    let mut traces = Table::new(["pair", "init", "iteration", "loss"]);
    traces.note(format!("solver {}; alpha {}", solver_cfg.kind, args.alpha));
    let mut per_pair = Table::new([
        "pair",
        "g1",
        "g2",
        "alpha",
        "rho",
        "predicted_loss",
        "uniform_final",
        "warm_final",
        "uniform_iters_to_tol",
        "warm_iters_to_tol",
        "error",
    ]);
    per_pair.note(format!("tolerance {} relative to the uniform start's final loss", args.rel));
    let mut gaps: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let (mut compared, mut faster, mut failed) = (0usize, 0usize, 0usize);
    let (mut it_uniform, mut it_warm) = (Vec::new(), Vec::new());
    for (k, (p, run)) in pairs.iter().zip(&runs).enumerate() {
        let base = [k.to_string(), p.g1.to_string(), p.g2.to_string(), p.alpha.to_string(), p.rho.to_string()];
        match run {
            Ok(ws) => {
                let target = ws.uniform.loss();
                for (init, report) in [("uniform", &ws.uniform), ("ulot", &ws.warm)] {
                    for (i, l) in report.loss_trace.iter().enumerate() {
                        traces.push([k.to_string(), init.to_string(), i.to_string(), l.to_string()]);
                    }
                }
                for (slot, report) in [&ws.uniform, &ws.warm].into_iter().enumerate() {
                    let scale = target.abs().max(f64::MIN_POSITIVE);
                    gaps[slot].push(report.loss_trace.iter().map(|l| (l - target) / scale).collect());
                }
                let u = iterations_to_within(&ws.uniform.loss_trace, target, args.rel);
                let v = iterations_to_within(&ws.warm.loss_trace, target, args.rel);
                compared += 1;
                faster += usize::from(ws.warm_is_faster(args.rel));
                it_uniform.push(u.map_or(f64::NAN, |x| x as f64));
                it_warm.push(v.map_or(f64::NAN, |x| x as f64));
                per_pair.push(base.into_iter().chain([
                    ws.predicted_loss.to_string(),
                    target.to_string(),
                    ws.warm.loss().to_string(),
                    u.map_or_else(String::new, |x| x.to_string()),
                    v.map_or_else(String::new, |x| x.to_string()),
                    String::new(),
                ]));
            }
            Err(e) => {
                failed += 1;
                per_pair.push(base.into_iter().chain([
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ]));
            }
        }
    }
    traces.write(&args.out.join("traces.csv"))?;
    per_pair.write(&args.out.join("pairs.csv"))?;

    let mut bands = Table::new(["init", "iteration", "q20", "q50", "q80"]);
    bands.note("relative gap (loss - uniform final) / |uniform final|; finished traces hold their last value");
    for (slot, init) in ["uniform", "ulot"].into_iter().enumerate() {
        let len = gaps[slot].iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..len {
            let column: Vec<f64> = gaps[slot]
                .iter()
                .filter_map(|t| t.get(i).or(t.last()).copied())
                .collect();
            bands.push([
                init.to_string(),
                i.to_string(),
                quantile(&column, 0.2).to_string(),
                quantile(&column, 0.5).to_string(),
                quantile(&column, 0.8).to_string(),
            ]);
        }
    }
    bands.write(&args.out.join("bands.csv"))?;
    let fraction = if compared > 0 { faster as f64 / compared as f64 } else { f64::NAN };
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "pairs": pairs.len(),
            "compared": compared,
            "failed": failed,
            "warm_faster": faster,
            "fraction_warm_faster": fraction,
            "median_iters_uniform": median(&it_uniform),
            "median_iters_warm": median(&it_warm),
            "rel": args.rel,
            "solver": solver_cfg.kind,
        }),
    )?;
    println!("warm start faster on {faster} of {compared} pairs");
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: pairs.len(),
        });
    }
    Ok(())
}
