use std::path::PathBuf;
use std::time::Instant;

use serde_json::json;
use ulot::fugw::{fugw_loss, FugwParams};
use ulot::model::{clamp_rho, predict_plan};
use ulot::solvers::solve_fugw;

use crate::common::{graph, weights, RunConfig, SolverArgs};
use crate::error::{CliError, Result};
use crate::output::{create_dir, matrix_table, read_matrix, write_json};

#[derive(Debug, clap::Args)]
pub struct Solve {
    /// Source and target graph files.
    #[arg(long, num_args = 2, value_names = ["G1", "G2"], required = true)]
    pub pair: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub rho: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Initial plan as CSV, e.g. a `plan.csv` written by `predict`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Settings file; its `solver` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for `report.json` and `plan.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn solve(args: &Solve) -> Result<()> {
    let cfg = args.solver.apply(RunConfig::load(args.config.as_deref())?.solver);
    let (g1, g2) = (graph(&args.pair[0])?, graph(&args.pair[1])?);
    let params = FugwParams::new(args.alpha, args.rho)?;
    let init = args.init.as_deref().map(read_matrix).transpose()?;
    create_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    match solve_fugw(&g1, &g2, &params, &cfg, init.as_ref()) {
        Ok(report) => {
            let mut value = serde_json::to_value(report.record()).expect("record serializes");
            value["status"] = json!("ok");
            value["n1"] = json!(g1.n());
            value["n2"] = json!(g2.n());
            value["loss"] = json!(report.loss());
            write_json(&report_path, &value)?;
            let mut plan = matrix_table(report.plan.plan(), "j");
            plan.note(format!("solver {}; loss {}", report.solver, report.loss()));
            plan.write(&args.out.join("plan.csv"))?;
            println!(
                "{} loss {} mass {} after {} iterations",
                report.solver,
                report.loss(),
                report.plan.mass(),
                report.iters()
            );
            Ok(())
        }
        Err(e) => {
            write_json(
                &report_path,
                &json!({
                    "status": "failed",
                    "error": e.to_string(),
                    "solver": cfg.kind,
                    "alpha": args.alpha,
                    "rho": args.rho,
                    "n1": g1.n(),
                    "n2": g2.n(),
                    "config": cfg,
                    "init": if init.is_some() { "provided" } else { "uniform" },
                }),
            )?;
            Err(CliError::Solver(e))
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Predict {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, num_args = 2, value_names = ["G1", "G2"], required = true)]
    pub pair: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub rho: f64,
    /// Directory for `prediction.json` and `plan.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn predict(args: &Predict) -> Result<()> {
    let w = weights(&args.weights)?;
    let (g1, g2) = (graph(&args.pair[0])?, graph(&args.pair[1])?);
    let params = FugwParams::new(args.alpha, args.rho)?;
    let started = Instant::now();
    let plan = predict_plan(&g1, &g2, args.alpha, args.rho, &w)?;
    let time_ms = started.elapsed().as_secs_f64() * 1e3;
    let loss = fugw_loss(&g1, &g2, plan.plan(), &params)?;
    create_dir(&args.out)?;
    write_json(
        &args.out.join("prediction.json"),
        &json!({
            "alpha": args.alpha,
            "rho": args.rho,
            "rho_model": clamp_rho(args.rho),
            "loss": loss,
            "mass": plan.mass(),
            "n1": g1.n(),
            "n2": g2.n(),
            "time_ms": time_ms,
        }),
    )?;
    let mut table = matrix_table(plan.plan(), "j");
    table.note(format!("predicted; loss {loss}"));
    table.write(&args.out.join("plan.csv"))?;
    println!("loss {loss} mass {}", plan.mass());
    Ok(())
}
