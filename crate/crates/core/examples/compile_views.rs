//! Shows the linear constraint rows each view kind compiles to.

use entropy_pooling::scenario::{ProbabilityVector, ScenarioPanel};
use entropy_pooling::views::{
    compile_on_panel, CompileOptions, Direction, TargetSpec, View, ViewKind,
};

fn main() -> entropy_pooling::Result<()> {
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|k| vec![k as f64 * 0.1 - 0.5, ((k * 7) % 12) as f64 * 0.05])
        .collect();
    let panel = ScenarioPanel::from_rows(vec!["a".into(), "b".into()], &rows)?;
    let prior = ProbabilityVector::uniform(12);
    let views = [
        View::mean("a", Direction::AtLeast, TargetSpec::KappaSigma(0.5)),
        View::new(ViewKind::Ranking, &["b", "a"], Direction::AtLeast),
        View::new(ViewKind::VolatilityStd, &["b"], Direction::Equal)
            .with_target(TargetSpec::ReferenceMultiple(1.2)),
        View::new(ViewKind::MedianLocation, &["a"], Direction::AtMost)
            .with_target(TargetSpec::Absolute(0.0)),
        View::new(ViewKind::CorrelationStress, &["a", "b"], Direction::Equal)
            .with_target(TargetSpec::Absolute(0.3)),
    ];
    for view in &views {
        let set = compile_on_panel(
            std::slice::from_ref(view),
            &panel,
            &prior,
            &CompileOptions::default(),
        )?;
        println!("{:?} {:?}", view.kind, view.columns);
        let tagged = set
            .equalities()
            .iter()
            .skip(1)
            .map(|r| ("=", r))
            .chain(set.inequalities().iter().map(|r| ("<=", r)));
        for (op, row) in tagged {
            let head: Vec<String> = row
                .coefficients
                .iter()
                .take(6)
                .map(|c| format!("{c:+.3}"))
                .collect();
            println!(
                "  {:<28} [{} ...] {op} {:+.4}",
                row.label,
                head.join(" "),
                row.rhs
            );
        }
    }
    Ok(())
}
