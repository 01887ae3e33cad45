//! Panel, column expressions and probability-weighted summaries.

use entropy_pooling::scenario::{weighted_statistics, ProbabilityVector, ScenarioPanel};

fn main() -> entropy_pooling::Result<()> {
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|k| {
            let t = k as f64 / 400.0;
            vec![(t * 17.0).sin(), (t * 5.0).cos() + 0.3 * (t * 17.0).sin()]
        })
        .collect();
    let panel = ScenarioPanel::from_rows(vec!["x".into(), "y".into()], &rows)?;
    let raw: Vec<f64> = (0..400).map(|k| 1.0 + k as f64 / 400.0).collect();
    let total: f64 = raw.iter().sum();
    let tilted = ProbabilityVector::new(raw.iter().map(|w| w / total).collect())?;
    let vp = panel.view_panel(&["x", "y", "y - x", "abs(x)"])?;
    for (name, p) in [
        ("uniform", ProbabilityVector::uniform(400)),
        ("tilted", tilted),
    ] {
        let s = weighted_statistics(&vp, &p, &[0.05, 0.5, 0.95], &[0.95])?;
        println!("{name} (effective size {:.1})", p.effective_size());
        for c in &s.columns {
            println!(
                "  {:>7}  mean {:+.4}  std {:.4}  median {:+.4}  cvar95 {:.4}",
                c.label, c.mean, c.std, c.median, c.cvar[0].1
            );
        }
    }
    Ok(())
}
