//! Synthetic option-trading case study: a 14-factor history, a 9-butterfly
//! book and three analysts with views.
//!
//! The history is generated, not observed. Daily log-changes of three stocks
//! load on a common market shock with Student-t tails; ATM implied-vol changes
//! (in decimals) move against the stock and decay with tenor; two curve points
//! move together in level with a smaller slope component.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::error::Result;
use crate::options::{current_prices, ButterflyContract, FrontierSpec, LinearPositionConstraints};
use crate::pooling::ConfidenceSpec;
use crate::scenario::ScenarioPanel;
use crate::views::{Direction, TargetSpec, UserList, UserViews, View, ViewKind};

pub const HISTORY_ROWS: usize = 700;
pub const TAIL_DOF: f64 = 4.0;
pub const HORIZON: f64 = 1.0 / 252.0;
pub const RISK_FREE: f64 = 0.03;

/// Names, spot, ATM vol, daily stock vol, market beta.
pub const NAMES: [(&str, f64, f64, f64, f64); 3] = [
    ("M", 30.0, 0.30, 0.018, 0.8),
    ("Y", 25.0, 0.38, 0.025, 1.0),
    ("G", 500.0, 0.33, 0.021, 1.1),
];

/// Tenor label, years, vol-of-vol scale relative to the one-month point.
pub const TENORS: [(&str, f64, f64); 3] = [
    ("1m", 1.0 / 12.0, 1.0),
    ("2m", 2.0 / 12.0, 0.75),
    ("6m", 0.5, 0.45),
];

pub const SMILE_ALPHA: f64 = -0.08;
pub const SMILE_BETA: f64 = 0.06;

/// Factor names in panel order: stock, its three vols, repeated per name, then the curve.
pub fn factor_names() -> Vec<String> {
    let mut names = Vec::new();
    for (n, ..) in NAMES {
        names.push(n.to_string());
        for (t, ..) in TENORS {
            names.push(format!("{n}{t}"));
        }
    }
    names.push("X2y".into());
    names.push("X10y".into());
    names
}

/// Heavy-tailed shock with unit variance.
fn shock(dist: &StudentT<f64>, rng: &mut ChaCha8Rng) -> f64 {
    dist.sample(rng) * ((TAIL_DOF - 2.0) / TAIL_DOF).sqrt()
}

pub fn synthetic_history(rows: usize, seed: u64) -> Result<ScenarioPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = StudentT::new(TAIL_DOF).expect("positive degrees of freedom");
    let mut data = Vec::with_capacity(rows * 14);
    for _ in 0..rows {
        let market = shock(&t, &mut rng);
        for (_, _, _, daily, beta) in NAMES {
            let idio = shock(&t, &mut rng);
            let loading = beta / (1.0 + beta * beta).sqrt();
            let x = daily * (loading * market + (1.0 - loading * loading).sqrt() * idio);
            data.push(x);
            let vol_level = shock(&t, &mut rng);
            let twist = shock(&t, &mut rng);
            for (k, (_, _, scale)) in TENORS.iter().enumerate() {
                // vol rises when the stock falls; the term structure twists a little
                let dv = 0.012 * scale * (-0.6 * x / daily + 0.8 * vol_level)
                    + 0.002 * (k as f64 - 1.0) * twist;
                data.push(dv);
            }
        }
        let level = shock(&t, &mut rng);
        let slope = shock(&t, &mut rng);
        data.push(0.0006 * level - 0.0002 * slope);
        data.push(0.0006 * level + 0.0002 * slope);
    }
    ScenarioPanel::new(factor_names(), data)
}

/// At-the-money butterflies on every name and tenor.
pub fn standard_book() -> Vec<ButterflyContract> {
    let mut book = Vec::new();
    for (name, spot, vol, ..) in NAMES {
        for (k, (tenor, years, _)) in TENORS.iter().enumerate() {
            book.push(ButterflyContract {
                id: format!("{name}{tenor}"),
                underlying_id: name.to_string(),
                vol_factor: format!("{name}{tenor}"),
                strike: spot,
                expiry: *years,
                risk_free: RISK_FREE,
                smile_alpha: SMILE_ALPHA,
                smile_beta: SMILE_BETA,
                current_underlying: spot,
                current_atm_vol: vol - 0.01 * k as f64,
                horizon: HORIZON,
            });
        }
    }
    book
}

/// The three analysts: bearish G6m-G2m spread, bullish realized vol of M, steeper curve.
pub fn analyst_views() -> Vec<UserViews> {
    vec![
        UserViews {
            user_id: "spread".into(),
            overall_confidence: 0.20,
            views: vec![View::mean(
                "G6m - G2m",
                Direction::AtMost,
                TargetSpec::KappaSigma(-1.0),
            )],
        },
        UserViews {
            user_id: "realized_vol".into(),
            overall_confidence: 0.25,
            views: vec![
                View::new(ViewKind::MedianLocation, &["abs(M)"], Direction::AtLeast)
                    .with_target(TargetSpec::QuantileShift(0.5)),
            ],
        },
        UserViews {
            user_id: "slope".into(),
            overall_confidence: 0.20,
            views: vec![View::mean(
                "X10y - X2y",
                Direction::Equal,
                TargetSpec::Absolute(0.0005),
            )],
        },
    ]
}

pub fn committee() -> ConfidenceSpec {
    ConfidenceSpec::from_overall(&[("spread", 0.20), ("realized_vol", 0.25), ("slope", 0.20)])
        .expect("committee confidences are valid")
}

/// Zero delta per name, zero budget, and `|w_i| P_i <= notional`.
pub fn frontier_spec(
    book: &[ButterflyContract],
    lambdas: Vec<f64>,
    notional: f64,
) -> Result<FrontierSpec> {
    let prices = current_prices(book)?;
    let caps = prices.iter().map(|p| notional / p).collect();
    Ok(FrontierSpec::new(
        0.95,
        lambdas,
        caps,
        LinearPositionConstraints::delta_and_budget(book)?,
    ))
}

/// Writes `history.csv`, `views.json` and `book.json` into `dir`.
pub fn write_inputs(dir: impl AsRef<Path>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    synthetic_history(HISTORY_ROWS, seed)?
        .write_csv(std::fs::File::create(dir.join("history.csv"))?)?;
    let views = UserList {
        users: analyst_views(),
    };
    std::fs::write(
        dir.join("views.json"),
        serde_json::to_string_pretty(&views)?,
    )?;
    std::fs::write(
        dir.join("book.json"),
        serde_json::to_string_pretty(&standard_book())?,
    )?;
    Ok(())
}
