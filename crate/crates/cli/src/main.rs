//! `ulot`: graph transport from the command line.

mod cmd_apps;
mod cmd_bench;
mod cmd_data;
mod cmd_solve;
mod cmd_train;
mod common;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ulot", version, about = "Fused unbalanced Gromov-Wasserstein transport between graphs")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a stochastic block model corpus with a manifest.
    GenSbm(cmd_data::GenSbm),
    /// Solve one pair with a classical solver.
    Solve(cmd_solve::Solve),
    /// Train the predictor on random pairs of a corpus.
    Train(cmd_train::Train),
    /// Predict the plan of one pair.
    Predict(cmd_solve::Predict),
    /// Compare predicted and solver losses.
    Eval(cmd_train::Eval),
    /// Time methods over pairs and parameter cells, and against graph size.
    Bench(cmd_bench::Bench),
    /// Compare solver convergence from the product plan and from the
    /// prediction.
    WarmstartBench(cmd_bench::WarmstartBench),
    /// Transfer node labels from a source graph to a target graph.
    LabelProp(cmd_apps::LabelProp),
    /// Tune alpha and rho on half of the target labels.
    Tune(cmd_apps::Tune),
    /// Move a graph toward a target by gradient descent on the loss.
    Flow(cmd_apps::Flow),
    /// Plan-mass similarity of a corpus and its MDS embedding.
    Similarity(cmd_apps::Similarity),
}

fn run(cli: &Cli) -> error::Result<()> {
    match &cli.command {
        Command::GenSbm(a) => cmd_data::run(a),
        Command::Solve(a) => cmd_solve::solve(a),
        Command::Train(a) => cmd_train::run_train(a),
        Command::Predict(a) => cmd_solve::predict(a),
        Command::Eval(a) => cmd_train::run_eval(a),
        Command::Bench(a) => cmd_bench::run_bench(a),
        Command::WarmstartBench(a) => cmd_bench::run_warmstart(a),
        Command::LabelProp(a) => cmd_apps::run_label_prop(a),
        Command::Tune(a) => cmd_apps::run_tune(a),
        Command::Flow(a) => cmd_apps::run_flow(a),
        Command::Similarity(a) => cmd_apps::run_similarity(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
