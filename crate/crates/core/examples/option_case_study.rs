//! Butterfly book on a synthetic 14-factor market: bootstrap, price once,
//! process three analysts' views, pool them, and trace the mean-CVaR frontier
//! before and after.
//!
//!     cargo run --release --example option_case_study -- [J] [seed]

use std::time::Instant;

use entropy_pooling::case_study::{
    analyst_views, frontier_spec, standard_book, synthetic_history, HISTORY_ROWS,
};
use entropy_pooling::options::{
    build_pnl_panel, current_prices, kernel_bootstrap, mean_cvar_frontier, BootstrapConfig,
    FrontierPoint,
};
use entropy_pooling::scenario::{weighted_mean, ProbabilityVector};
use entropy_pooling::workflow::{solve_and_pool, WorkflowOptions};

fn show(title: &str, ids: &[String], points: &[FrontierPoint]) {
    println!("\n{title}");
    print!("{:>8} {:>10} {:>10}", "lambda", "E[pnl]", "CVaR95");
    for id in ids {
        print!(" {id:>7}");
    }
    println!();
    for p in points {
        print!(
            "{:>8.3} {:>10.3} {:>10.3}",
            p.lambda, p.expected_pnl, p.cvar
        );
        for w in &p.weights {
            print!(" {w:>7.2}");
        }
        println!();
    }
}

fn main() -> entropy_pooling::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let j: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let seed: u64 = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(7);
    let start = Instant::now();

    let history = synthetic_history(HISTORY_ROWS, seed)?;
    let (panel, prior) = kernel_bootstrap(&history, &BootstrapConfig::new(j, seed))?;
    let book = standard_book();
    let pnl = build_pnl_panel(&panel, &book, &current_prices(&book)?)?;
    println!(
        "{} scenarios x {} factors, {} contracts priced in {:.2?}",
        j,
        panel.num_factors(),
        book.len(),
        start.elapsed()
    );

    let users = analyst_views();
    let pooled = solve_and_pool(&panel, &prior, &users, &WorkflowOptions::default())?;
    for u in &pooled.users {
        let d = &u.subsets[0].diagnostics;
        println!(
            "{:<13} c = {:.2}  KL = {:.5}  iterations = {}",
            u.user_id, u.overall_confidence, d.relative_entropy, d.iterations
        );
    }

    let spread: Vec<f64> = panel.view_panel(&["G6m - G2m"])?.column(0).to_vec();
    let slope: Vec<f64> = panel.view_panel(&["X10y - X2y"])?.column(0).to_vec();
    let report = |name: &str, p: &ProbabilityVector| -> entropy_pooling::Result<()> {
        println!(
            "{name:<9} E[G6m-G2m] = {:+.6}  E[X10y-X2y] = {:+.6}",
            weighted_mean(&spread, p)?,
            weighted_mean(&slope, p)?
        );
        Ok(())
    };
    report("prior", &prior)?;
    report("pooled", &pooled.pooled)?;

    let lambdas = vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 1e3];
    let spec = frontier_spec(&book, lambdas, 1_000.0)?;
    show(
        "frontier, reference model",
        pnl.instrument_ids(),
        &mean_cvar_frontier(&pnl, &prior, &spec)?,
    );
    show(
        "frontier, spread view only",
        pnl.instrument_ids(),
        &mean_cvar_frontier(&pnl, &pooled.users[0].posterior, &spec)?,
    );
    show(
        "frontier, committee blend",
        pnl.instrument_ids(),
        &mean_cvar_frontier(&pnl, &pooled.pooled, &spec)?,
    );
    println!("\ntotal {:.2?}", start.elapsed());
    Ok(())
}
