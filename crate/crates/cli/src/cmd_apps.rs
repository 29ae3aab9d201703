use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::json;
use ulot::apps::{
    graph_flow, mds_embed_with, propagate_labels, similarity_matrix, tune_and_score, Dissimilarity, FlowConfig,
    PlanSource, TuneConfig,
};
use ulot::fugw::FugwParams;
use ulot::graph::{to_json_string, Graph};
use ulot::model::predict_plan;
use ulot::solvers::{solve_fugw, SolverConfig};

use crate::common::{dataset, graph, parse_solver, weights};
use crate::error::{CliError, Result};
use crate::output::{create_dir, matrix_table, write_file, write_json, Table};

fn labels_of<'a>(g: &'a Graph, what: &str) -> Result<&'a [usize]> {
    g.labels().ok_or_else(|| CliError::Input(format!("the {what} graph has no node labels")))
}

#[derive(Debug, clap::Args)]
pub struct LabelProp {
    /// Predict the plan with these weights.
    #[arg(long, required_unless_present = "solver")]
    pub weights: Option<PathBuf>,
    /// Solve for the plan with this solver instead.
    #[arg(long, value_parser = parse_solver, conflicts_with = "weights")]
    pub solver: Option<ulot::solvers::SolverKind>,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    /// Directory for `probabilities.csv` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_label_prop(args: &LabelProp) -> Result<()> {
    let (g1, g2) = (graph(&args.source)?, graph(&args.target)?);
    let plan = match (&args.weights, args.solver) {
        (Some(w), _) => predict_plan(&g1, &g2, args.alpha, args.rho, &weights(w)?)?.into_plan(),
        (None, Some(kind)) => {
            let params = FugwParams::new(args.alpha, args.rho)?;
            solve_fugw(&g1, &g2, &params, &SolverConfig::new(kind), None)?.plan.into_plan()
        }
        (None, None) => unreachable!("clap requires a plan source"),
    };
    let result = propagate_labels(&plan, labels_of(&g1, "source")?)?;
    create_dir(&args.out)?;
    let predicted = result.predicted();
    let mut table = Table::new(
        ["node", "predicted", "unmatched"]
            .into_iter()
            .map(String::from)
            .chain(result.classes.iter().map(|c| format!("p_{c}"))),
    );
    for (i, p) in predicted.iter().enumerate() {
        table.push(
            [i.to_string(), p.map_or_else(String::new, |c| c.to_string()), result.unmatched[i].to_string()]
                .into_iter()
                .chain(result.probabilities.row(i).iter().map(|v| v.to_string())),
        );
    }
    table.write(&args.out.join("probabilities.csv"))?;
    let report = match g2.labels() {
        Some(truth) => {
            let all: Vec<usize> = (0..g2.n()).collect();
            Some(result.score(truth, &all)?)
        }
        None => None,
    };
    write_json(
        &args.out.join("report.json"),
        &json!({
            "accuracy": report.as_ref().map(|r| r.accuracy),
            "n_unmatched": result.unmatched.iter().filter(|u| **u).count(),
            "per_class_accuracy": report.as_ref().map(|r| r.per_class_accuracy.clone()),
            "degenerate": result.degenerate,
            "alpha": args.alpha,
            "rho": args.rho,
        }),
    )?;
    if let Some(r) = report {
        println!("accuracy {} ({} unmatched)", r.accuracy, r.n_unmatched);
    }
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct Tune {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho0: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub step_size: f64,
    /// Take every step at full size.
    #[arg(long)]
    pub no_backtracking: bool,
    /// Picks which half of the target labels is observed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `trajectory.csv` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_tune(args: &Tune) -> Result<()> {
    let (g1, g2) = (graph(&args.source)?, graph(&args.target)?);
    let w = weights(&args.weights)?;
    let cfg = TuneConfig {
        steps: args.steps,
        step_size: args.step_size,
        backtracking: !args.no_backtracking,
        ..TuneConfig::default()
    };
    let tuned = tune_and_score(&g1, &g2, &w, (args.alpha0, args.rho0), &cfg, args.seed)?;
    create_dir(&args.out)?;
    let mut table = Table::new(["step", "alpha", "rho", "objective"]);
    table.note(format!(
        "backtracking {}; step size {}",
        cfg.backtracking, cfg.step_size
    ));
    for s in &tuned.trajectory {
        table.push([s.step.to_string(), s.alpha.to_string(), s.rho.to_string(), s.objective.to_string()]);
    }
    table.write(&args.out.join("trajectory.csv"))?;
    let last = tuned.trajectory.last().expect("trajectory holds the start");
    write_json(
        &args.out.join("report.json"),
        &json!({
            "alpha": last.alpha,
            "rho": last.rho,
            "objective": last.objective,
            "steps_taken": tuned.trajectory.len() - 1,
            "accuracy": tuned.report.accuracy,
            "n_unmatched": tuned.report.n_unmatched,
            "per_class_accuracy": tuned.report.per_class_accuracy,
            "observed": tuned.observed,
            "held_out": tuned.held_out,
        }),
    )?;
    println!(
        "alpha {} rho {} held-out accuracy {}",
        last.alpha, last.rho, tuned.report.accuracy
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct Flow {
    #[arg(long)]
    pub start: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, required_unless_present = "solver")]
    pub weights: Option<PathBuf>,
    /// Take plans from this solver instead of the model.
    #[arg(long, value_parser = parse_solver, conflicts_with = "weights")]
    pub solver: Option<ulot::solvers::SolverKind>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 20.0)]
    pub step_size: f64,
    /// Distance at or below which a pair becomes an edge.
    #[arg(long, default_value_t = 1.5)]
    pub threshold: f64,
    /// Also write every intermediate graph.
    #[arg(long)]
    pub keep_graphs: bool,
    /// Directory for `trajectory.csv` and `final.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_flow(args: &Flow) -> Result<()> {
    let (start, target) = (graph(&args.start)?, graph(&args.target)?);
    let params = FugwParams::new(args.alpha, args.rho)?;
    let cfg = FlowConfig {
        steps: args.steps,
        step_size: args.step_size,
        threshold: args.threshold,
    };
    let w = args.weights.as_deref().map(weights).transpose()?;
    let solver = args.solver.map(SolverConfig::new);
    let source = match (&w, &solver) {
        (Some(w), _) => PlanSource::Model(w),
        (None, Some(s)) => PlanSource::Solver(s),
        (None, None) => unreachable!("clap requires a plan source"),
    };
    let trajectory = graph_flow(&start, &target, &params, source, &cfg)?;
    create_dir(&args.out)?;
    let mut table = Table::new(["step", "loss", "edges", "disconnected"]);
    table.note(format!("step size {}; threshold {}", cfg.step_size, cfg.threshold));
    for s in &trajectory {
        table.push([s.step.to_string(), s.loss.to_string(), s.edges.to_string(), s.disconnected.to_string()]);
        if args.keep_graphs {
            write_file(&args.out.join(format!("graphs/step_{:04}.json", s.step)), to_json_string(&s.graph))?;
        }
    }
    table.write(&args.out.join("trajectory.csv"))?;
    let last = trajectory.last().expect("trajectory holds the start");
    write_file(&args.out.join("final.json"), to_json_string(&last.graph))?;
    println!("loss {} -> {} over {} steps", trajectory[0].loss, last.loss, cfg.steps);
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct Similarity {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Keep at most this many graphs of each type, in dataset order (0 keeps
    /// all).
    #[arg(long, default_value_t = 0)]
    pub per_kind: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub rho: f64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// one-minus, sqrt-one-minus or neg-log
    #[arg(long, value_parser = parse_dissimilarity, default_value = "one-minus")]
    pub dissimilarity: Dissimilarity,
    /// Directory for `similarity.csv`, `mds.csv` and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_dissimilarity(s: &str) -> std::result::Result<Dissimilarity, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown dissimilarity {s:?}"))
}

pub fn run_similarity(args: &Similarity) -> Result<()> {
    let w = weights(&args.weights)?;
    let data = dataset(args.dataset.as_deref())?;
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let c = seen.entry(data.kinds[i].as_str()).or_default();
            *c += 1;
            args.per_kind == 0 || *c <= args.per_kind
        })
        .collect();
    let graphs: Vec<Graph> = keep.iter().map(|&i| data.graphs[i].clone()).collect();
    let kinds: Vec<&str> = keep.iter().map(|&i| data.kinds[i].as_str()).collect();
    let s = similarity_matrix(&graphs, &w, args.alpha, args.rho)?;
    let emb = mds_embed_with(&s, args.dim, args.dissimilarity)?;
    create_dir(&args.out)?;

    let mut sim = matrix_table(&s, "g");
    sim.note(format!("graphs {keep:?}; alpha {}; rho {}", args.alpha, args.rho));
    sim.write(&args.out.join("similarity.csv"))?;
    let mut mds = Table::new(
        ["graph", "kind"]
            .into_iter()
            .map(String::from)
            .chain((0..args.dim).map(|k| format!("x{k}"))),
    );
    mds.note(format!("dissimilarity {:?}; padded {}", args.dissimilarity, emb.padded));
    for (r, &i) in keep.iter().enumerate() {
        mds.push(
            [i.to_string(), kinds[r].to_string()]
                .into_iter()
                .chain(emb.coords.row(r).iter().map(|v| v.to_string())),
        );
    }
    mds.write(&args.out.join("mds.csv"))?;

    // mean similarity per pair of types, off-diagonal entries only
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for a in 0..keep.len() {
        for b in 0..keep.len() {
            if a != b {
                let key = if kinds[a] <= kinds[b] { (kinds[a], kinds[b]) } else { (kinds[b], kinds[a]) };
                let e = sums.entry((key.0.to_string(), key.1.to_string())).or_default();
                e.0 += s.get(a, b);
                e.1 += 1;
            }
        }
    }
    let means: Vec<_> = sums
        .iter()
        .map(|((a, b), (sum, n))| json!({"kind_a": a, "kind_b": b, "mean": sum / *n as f64, "count": n}))
        .collect();
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "graphs": keep,
            "kinds": kinds,
            "eigenvalues": emb.eigenvalues,
            "padded": emb.padded,
            "type_means": means,
        }),
    )?;
    println!("{} x {} similarity matrix", keep.len(), keep.len());
    Ok(())
}
