//! Per-view confidences through the power-set allocation, then across users.

use std::collections::BTreeMap;

use entropy_pooling::pooling::{
    pool_multi, power_set_allocation, skill_confidence, ConfidenceSpec, TrackRecord,
};
use entropy_pooling::scenario::{weighted_mean, ProbabilityVector, ScenarioPanel};
use entropy_pooling::views::{Direction, TargetSpec, UserViews, View};
use entropy_pooling::workflow::{solve_user, WorkflowOptions};

fn main() -> entropy_pooling::Result<()> {
    let allocation =
        power_set_allocation(&[("v1".into(), 0.3), ("v2".into(), 0.1), ("v3".into(), 0.3)])?;
    for (set, mass) in &allocation.subsets {
        println!("{:?}: {mass}", set);
    }

    let rows: Vec<Vec<f64>> = (0..1000)
        .map(|k| {
            vec![
                ((k * 37) % 1000) as f64 / 1000.0 - 0.5,
                ((k * 91) % 1000) as f64 / 1000.0 - 0.5,
            ]
        })
        .collect();
    let panel = ScenarioPanel::from_rows(vec!["a".into(), "b".into()], &rows)?;
    let prior = ProbabilityVector::uniform(1000);
    let options = WorkflowOptions::default();
    let alice = UserViews {
        user_id: "alice".into(),
        overall_confidence: skill_confidence(TrackRecord {
            num_past_views: 40,
            view_outcome_correlation: 0.5,
        })?,
        views: vec![
            View::mean("a", Direction::Equal, TargetSpec::Absolute(0.1)).with_confidence(0.8),
            View::mean("b", Direction::AtLeast, TargetSpec::Absolute(0.05)).with_confidence(0.4),
        ],
    };
    let bob = UserViews {
        user_id: "bob".into(),
        overall_confidence: 0.3,
        views: vec![View::mean(
            "a",
            Direction::Equal,
            TargetSpec::Absolute(-0.1),
        )],
    };
    let mut posteriors = BTreeMap::new();
    for user in [&alice, &bob] {
        let up = solve_user(&panel, &prior, user, &options)?;
        println!(
            "{} (c = {:.3}): E[a] = {:+.4}, E[b] = {:+.4}",
            user.user_id,
            user.overall_confidence,
            weighted_mean(&panel.column(0), &up.posterior)?,
            weighted_mean(&panel.column(1), &up.posterior)?
        );
        posteriors.insert(user.user_id.clone(), up.posterior);
    }
    let spec = ConfidenceSpec::from_overall(&[("alice", alice.overall_confidence), ("bob", 0.3)])?;
    let pooled = pool_multi(&posteriors, &spec, &prior)?;
    println!(
        "pooled (prior keeps {:.3}): E[a] = {:+.4}",
        spec.residual(),
        weighted_mean(&panel.column(0), &pooled)?
    );
    Ok(())
}
