//! Solves a joint set of views and reports the dual diagnostics.

use entropy_pooling::scenario::{weighted_mean, weighted_std, ProbabilityVector, ScenarioPanel};
use entropy_pooling::views::{Direction, TargetSpec, View, ViewKind};
use entropy_pooling::workflow::{solve_views, WorkflowOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> entropy_pooling::Result<()> {
    let j = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..j)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            vec![0.2 * z, 0.1 * (0.6 * z + 0.8 * e)]
        })
        .collect();
    let panel = ScenarioPanel::from_rows(vec!["equity".into(), "credit".into()], &rows)?;
    let prior = ProbabilityVector::uniform(j);
    let views = [
        View::mean("equity", Direction::AtMost, TargetSpec::KappaSigma(-0.5)),
        View::new(ViewKind::VolatilityStd, &["credit"], Direction::Equal)
            .with_target(TargetSpec::ReferenceMultiple(1.3)),
    ];
    let (post, diag) = solve_views(&panel, &prior, &views, &WorkflowOptions::default())?;
    for name in ["equity", "credit"] {
        let col = panel.column_by_name(name)?;
        println!(
            "{name:>7}: mean {:+.4} -> {:+.4}, std {:.4} -> {:.4}",
            weighted_mean(&col, &prior)?,
            weighted_mean(&col, &post)?,
            weighted_std(&col, &prior)?,
            weighted_std(&col, &post)?
        );
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&diag).expect("diagnostics serialize")
    );
    Ok(())
}
