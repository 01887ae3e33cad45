//! Views compiled and solved end to end; the attained statistics are recomputed
//! here from the posterior weights.

use entropy_pooling::scenario::{ProbabilityVector, ScenarioPanel};
use entropy_pooling::views::{Direction, TargetSpec, View, ViewKind};
use entropy_pooling::workflow::{solve_views, WorkflowOptions};
use entropy_pooling::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_panel(j: usize, rho: f64, seed: u64) -> ScenarioPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..j)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            vec![a, rho * a + (1.0 - rho * rho).sqrt() * e]
        })
        .collect();
    ScenarioPanel::from_rows(vec!["a".into(), "b".into()], &rows).unwrap()
}

fn moments(x: &[f64], y: &[f64], p: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mx: f64 = x.iter().zip(p).map(|(v, w)| v * w).sum();
    let my: f64 = y.iter().zip(p).map(|(v, w)| v * w).sum();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for ((a, b), w) in x.iter().zip(y).zip(p) {
        sxx += w * (a - mx) * (a - mx);
        syy += w * (b - my) * (b - my);
        sxy += w * (a - mx) * (b - my);
    }
    (mx, my, sxx.sqrt(), syy.sqrt(), sxy / (sxx * syy).sqrt())
}

fn ranks(col: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_by(|&i, &k| col[i].total_cmp(&col[k]));
    let mut r = vec![0.0; col.len()];
    for (pos, &i) in order.iter().enumerate() {
        r[i] = (pos + 1) as f64 / col.len() as f64;
    }
    r
}

#[test]
fn volatility_view_scales_std_by_one_and_a_half() {
    let j = 10_000;
    let panel = normal_panel(j, 0.0, 1);
    let prior = ProbabilityVector::uniform(j);
    let views = [
        View::mean("a", Direction::Equal, TargetSpec::KappaSigma(0.0)),
        View::new(ViewKind::VolatilityStd, &["a"], Direction::Equal)
            .with_target(TargetSpec::ReferenceMultiple(1.5)),
    ];
    let (post, diag) = solve_views(&panel, &prior, &views, &WorkflowOptions::default()).unwrap();
    let a = panel.column(0);
    let (_, _, s0, _, _) = moments(&a, &a, prior.as_slice());
    let (_, _, s1, _, _) = moments(&a, &a, post.as_slice());
    assert!(diag.converged);
    assert!((s1 / s0 - 1.5).abs() < 0.015, "ratio {}", s1 / s0);
}

#[test]
fn correlation_stress_reaches_target() {
    let j = 10_000;
    let panel = normal_panel(j, 0.5, 2);
    let prior = ProbabilityVector::uniform(j);
    let (a, b) = (panel.column(0), panel.column(1));
    let (_, _, _, _, before) = moments(&a, &b, prior.as_slice());
    assert!((before - 0.5).abs() < 0.03);
    let views = [
        View::new(ViewKind::CorrelationStress, &["a", "b"], Direction::Equal)
            .with_target(TargetSpec::Absolute(0.9)),
    ];
    let (post, _) = solve_views(&panel, &prior, &views, &WorkflowOptions::default()).unwrap();
    let (ma, mb, sa, sb, after) = moments(&a, &b, post.as_slice());
    let (ma0, mb0, sa0, sb0, _) = moments(&a, &b, prior.as_slice());
    assert!((after - 0.9).abs() < 0.02, "{after}");
    // anchored: means and stds stay put
    for (x, y) in [(ma, ma0), (mb, mb0), (sa, sa0), (sb, sb0)] {
        assert!((x - y).abs() < 1e-7, "{x} vs {y}");
    }
}

#[test]
fn tail_codependence_doubles_joint_tail_mass() {
    let j = 10_000;
    let panel = normal_panel(j, 0.0, 3);
    let prior = ProbabilityVector::uniform(j);
    let (ra, rb) = (ranks(&panel.column(0)), ranks(&panel.column(1)));
    let joint = |p: &[f64]| -> f64 {
        (0..j)
            .filter(|&s| ra[s] <= 0.1 && rb[s] <= 0.1)
            .map(|s| p[s])
            .sum()
    };
    let before = joint(prior.as_slice());
    assert!((before - 0.01).abs() < 0.003, "{before}");
    let view = View::new(ViewKind::TailCodependence, &["a", "b"], Direction::Equal)
        .with_thresholds(vec![0.1, 0.1])
        .with_target(TargetSpec::ReferenceMultiple(2.0));
    let (post, _) = solve_views(&panel, &prior, &[view], &WorkflowOptions::default()).unwrap();
    let after = joint(post.as_slice());
    assert!((after - 2.0 * before).abs() < 1e-8);
    assert!((after - 0.02).abs() < 0.005, "{after}");
}

#[test]
fn full_tail_set_conflicts_with_normalization() {
    let panel = normal_panel(500, 0.0, 4);
    let prior = ProbabilityVector::uniform(500);
    let view = View::new(ViewKind::TailCodependence, &["a", "b"], Direction::Equal)
        .with_thresholds(vec![1.0, 1.0])
        .with_target(TargetSpec::Absolute(0.5));
    let err = solve_views(&panel, &prior, &[view], &WorkflowOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)), "{err}");
}

#[test]
fn ranking_and_median_views_hold_at_posterior() {
    let j = 4_000;
    let panel = normal_panel(j, 0.3, 5);
    let prior = ProbabilityVector::uniform(j);
    let views = [
        View::new(ViewKind::Ranking, &["b", "a + 0.2"], Direction::AtLeast),
        View::new(ViewKind::MedianLocation, &["a"], Direction::AtLeast)
            .with_target(TargetSpec::Absolute(0.3)),
    ];
    let (post, diag) = solve_views(&panel, &prior, &views, &WorkflowOptions::default()).unwrap();
    let p = post.as_slice();
    let (a, b) = (panel.column(0), panel.column(1));
    let ea: f64 = a.iter().zip(p).map(|(v, w)| v * w).sum();
    let eb: f64 = b.iter().zip(p).map(|(v, w)| v * w).sum();
    assert!(eb >= ea + 0.2 - 1e-8, "{eb} vs {ea}");
    let below: f64 = a
        .iter()
        .zip(p)
        .filter(|(v, _)| **v < 0.3)
        .map(|(_, w)| w)
        .sum();
    assert!(below <= 0.5 + 1e-8);
    assert!(diag.max_constraint_violation <= 1e-8);
}
