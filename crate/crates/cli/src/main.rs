//! `pgd-certify`: run the solver, estimators and adaptive loop on a problem
//! file and write CSV/JSON artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "pgd-certify", version, about = "Certified PGD solutions of parametrized transient diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the separated solution and write solution.json.
    Solve(Common),
    /// Global error bound over the parameter grid (sweep.csv).
    Certify(Common),
    /// Bounds for m = 1..M on a fixed discretization (history.csv, sweep.csv).
    Sweep(Common),
    /// Goal-oriented bounds on the quantity of interest (goal.csv).
    Goal(Common),
    /// Greedy adaptive loop (history.csv, sweep.csv, solution.json).
    Adapt(Common),
    /// Oracle audit of the bounds; exit code 2 on any failed property.
    Verify(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Problem file (JSON).
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Number of modes (maximum number in `adapt`).
    #[arg(long)]
    pub m: Option<usize>,
    /// Adjoint modes for `goal` (default m + 2).
    #[arg(long)]
    pub m_adjoint: Option<usize>,
    /// Fixed-point sub-iterations per mode.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Discretization target as a fraction of the truncation indicator.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Stopping tolerance of the adaptive loop.
    #[arg(long)]
    pub gamma_tol: Option<f64>,
    /// Sweep points per parameter axis.
    #[arg(long)]
    pub sweep_density: Option<usize>,
    /// Oracle refinement factor in space and time (power of two).
    #[arg(long, default_value_t = 4)]
    pub oracle_refine: usize,
    /// Drive `adapt` with the goal-oriented bounds.
    #[arg(long)]
    pub goal: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("PGD_CERTIFY_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Ignored if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let result = match &cli.command {
        Command::Solve(c) => commands::solve(c),
        Command::Certify(c) => commands::certify(c),
        Command::Sweep(c) => commands::sweep(c),
        Command::Goal(c) => commands::goal(c),
        Command::Adapt(c) => commands::adapt(c),
        Command::Verify(c) => commands::verify(c),
    };
    match result {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::VerifyFailed) => ExitCode::from(2),
        Err(e) => {
            let body = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}
