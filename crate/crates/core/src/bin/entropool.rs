use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use entropy_pooling::case_study;
use entropy_pooling::normal::{compare_numerical, NormalModel, NormalViewSpec};
use entropy_pooling::options::{
    build_pnl_panel, current_prices, kernel_bootstrap, load_book, mean_cvar_frontier,
    write_frontier_csv, BootstrapConfig, FrontierSpec, LinearPositionConstraints,
};
use entropy_pooling::scenario::{ProbabilityVector, ScenarioPanel};
use entropy_pooling::service::{serve, AppState};
use entropy_pooling::solver::{relative_entropy, SolverConfig};
use entropy_pooling::views::{CompileOptions, ViewFile};
use entropy_pooling::workflow::{solve_and_pool, WorkflowOptions};
use entropy_pooling::{Error, Result};

/// Scenario reweighting by minimum relative entropy.
#[derive(Parser)]
#[command(name = "entropool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and pool the views in a view file; writes one probability per line.
    Solve(SolveArgs),
    /// Closed-form normal posterior against the numerical one on a discretized reference.
    Compare(CompareArgs),
    /// Mean-CVaR frontier of a butterfly book under a posterior.
    Frontier(FrontierArgs),
    /// Kernel-bootstrap a history CSV into a scenario panel.
    Bootstrap(BootstrapArgs),
    /// Write the synthetic option case-study inputs (history, views, book).
    SampleInputs {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolverFlags {
    /// Dual stopping tolerance on scaled residuals.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverFlags {
    fn config(&self) -> Result<SolverConfig> {
        let mut c = SolverConfig::default();
        if let Some(t) = self.tol {
            c.dual_tolerance = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iterations = m;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    views: PathBuf,
    /// Prior probabilities, one per line; uniform when absent.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics JSON path; printed to stdout when absent.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Overall confidence for a single-user view file.
    #[arg(long)]
    confidence: Option<f64>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    normal_views: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    j: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct FrontierArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Probabilities, one per line; uniform when absent.
    #[arg(long)]
    posterior: Option<PathBuf>,
    #[arg(long)]
    book: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    /// Caps each position at notional / current price.
    #[arg(long, default_value_t = 1000.0)]
    notional: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    j: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.15)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

fn load_prior(path: Option<&PathBuf>, len: usize) -> Result<ProbabilityVector> {
    let p = match path {
        Some(path) => ProbabilityVector::load(path)?,
        None => ProbabilityVector::uniform(len),
    };
    p.check_len(len)?;
    Ok(p)
}

fn run_solve(args: &SolveArgs) -> Result<()> {
    let panel = ScenarioPanel::load_csv(&args.panel)?;
    let prior = load_prior(args.prior.as_ref(), panel.num_scenarios())?;
    let mut users = ViewFile::load(&args.views)?.into_users();
    if let Some(c) = args.confidence {
        match users.as_mut_slice() {
            [only] => only.overall_confidence = c,
            _ => {
                return Err(Error::Parse(
                    "--confidence needs a single-user view file".into(),
                ))
            }
        }
    }
    let options = WorkflowOptions {
        compile: CompileOptions::default(),
        solver: args.solver.config()?,
    };
    let pooled = solve_and_pool(&panel, &prior, &users, &options)?;
    pooled.pooled.save(&args.out)?;
    let report = json!({
        "users": pooled.users,
        "pooled": {
            "relative_entropy": relative_entropy(&pooled.pooled, &prior)?,
            "effective_size": pooled.pooled.effective_size(),
        },
    });
    let text = serde_json::to_string_pretty(&report)?;
    match &args.diagnostics {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let model: NormalModel = serde_json::from_str(&std::fs::read_to_string(&args.model)?)?;
    let views: NormalViewSpec =
        serde_json::from_str(&std::fs::read_to_string(&args.normal_views)?)?;
    let c = compare_numerical(&model, &views, args.j, args.seed, &args.solver.config()?)?;
    println!(
        "{:>6} {:>14} {:>14} {:>14} {:>14}",
        "factor", "mean exact", "mean EP", "std exact", "std EP"
    );
    for k in 0..model.dim() {
        println!(
            "{:>6} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
            format!("X{}", k + 1),
            c.analytical.mu()[k],
            c.numerical_mu[k],
            c.analytical.sigma()[(k, k)].sqrt(),
            c.numerical_sigma[k][k].sqrt()
        );
    }
    println!(
        "max mean gap {:.3e}, max relative std gap {:.3e}",
        c.mean_gap, c.std_gap
    );
    println!("{}", serde_json::to_string(&c.diagnostics)?);
    Ok(())
}

fn run_frontier(args: &FrontierArgs) -> Result<()> {
    let panel = ScenarioPanel::load_csv(&args.panel)?;
    let p = load_prior(args.posterior.as_ref(), panel.num_scenarios())?;
    let book = load_book(&args.book)?;
    let prices = current_prices(&book)?;
    if !(args.notional > 0.0) {
        return Err(Error::Parse(format!(
            "notional must be positive, got {}",
            args.notional
        )));
    }
    let caps = prices.iter().map(|c| args.notional / c).collect();
    let spec = FrontierSpec::new(
        args.gamma,
        args.lambdas.clone(),
        caps,
        LinearPositionConstraints::delta_and_budget(&book)?,
    );
    let pnl = build_pnl_panel(&panel, &book, &prices)?;
    let points = mean_cvar_frontier(&pnl, &p, &spec)?;
    write_frontier_csv(
        &points,
        pnl.instrument_ids(),
        std::fs::File::create(&args.out)?,
    )
}

fn run_bootstrap(args: &BootstrapArgs) -> Result<()> {
    let history = ScenarioPanel::load_csv(&args.history)?;
    let config = BootstrapConfig {
        epsilon: args.epsilon,
        num_scenarios: args.j,
        seed: args.seed,
    };
    let (panel, _) = kernel_bootstrap(&history, &config)?;
    panel.write_csv(std::fs::File::create(&args.out)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(args) => run_solve(&args),
        Command::Compare(args) => run_compare(&args),
        Command::Frontier(args) => run_frontier(&args),
        Command::Bootstrap(args) => run_bootstrap(&args),
        Command::SampleInputs { dir, seed } => case_study::write_inputs(dir, seed),
        Command::Serve { addr, snapshot_dir } => {
            let state = snapshot_dir.map_or_else(AppState::new, AppState::with_snapshot_dir);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            rt.block_on(serve(&addr, state))?;
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Infeasible(_) => 3,
        Error::NotConverged { .. } => 4,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
