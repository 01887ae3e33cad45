//! Butterfly pricing, kernel bootstrap, p&l panels and the mean-CVaR frontier.
//!
//! A butterfly here is a long call plus a long put at the same strike. Prices
//! at the horizon are computed once per scenario; views only change the
//! probabilities attached to the resulting p&l panel.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::scenario::{weighted_cvar, ProbabilityVector, ScenarioPanel};

/// Bump in log-price used for the finite-difference delta.
pub const DELTA_BUMP: f64 = 1e-4;

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidPricing(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// `Phi(d) - Phi(-d)`.
fn central_mass(d: f64) -> f64 {
    erf(d / std::f64::consts::SQRT_2)
}

/// Black-Scholes value of a call plus a put struck at `k`.
pub fn bs_price(y: f64, sigma: f64, k: f64, t: f64, r: f64) -> Result<f64> {
    positive("underlying", y)?;
    positive("volatility", sigma)?;
    positive("strike", k)?;
    positive("maturity", t)?;
    if !r.is_finite() {
        return Err(Error::InvalidPricing(format!("rate {r}")));
    }
    let sd = sigma * t.sqrt();
    let d1 = ((y / k).ln() + (r + 0.5 * sigma * sigma) * t) / sd;
    let d2 = d1 - sd;
    Ok(y * central_mass(d1) - k * (-r * t).exp() * central_mass(d2))
}

/// Skew/smile map `sigma + alpha m + beta m^2` with `m = ln(y/K) / sqrt(T)`.
pub fn smile_vol(y: f64, sigma: f64, k: f64, t: f64, alpha: f64, beta: f64) -> Result<f64> {
    positive("underlying", y)?;
    positive("strike", k)?;
    positive("maturity", t)?;
    let m = (y / k).ln() / t.sqrt();
    let vol = sigma + alpha * m + beta * m * m;
    if !(vol > 0.0) {
        return Err(Error::NonPositiveVolatility { scenario: 0, vol });
    }
    Ok(vol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButterflyContract {
    pub id: String,
    /// Panel column holding the log-change of the underlying.
    pub underlying_id: String,
    /// Panel column holding the ATM implied-vol change, in decimals.
    pub vol_factor: String,
    pub strike: f64,
    pub expiry: f64,
    pub risk_free: f64,
    pub smile_alpha: f64,
    pub smile_beta: f64,
    pub current_underlying: f64,
    pub current_atm_vol: f64,
    pub horizon: f64,
}

impl ButterflyContract {
    pub fn validate(&self) -> Result<()> {
        positive("strike", self.strike)?;
        positive("expiry", self.expiry)?;
        positive("current underlying", self.current_underlying)?;
        positive("current vol", self.current_atm_vol)?;
        if !(self.horizon >= 0.0 && self.expiry - self.horizon > 0.0) {
            return Err(Error::InvalidPricing(format!(
                "{}: horizon {} must lie in [0, expiry {})",
                self.id, self.horizon, self.expiry
            )));
        }
        Ok(())
    }

    fn price_at(&self, x_y: f64, x_sigma: f64, maturity: f64) -> Result<f64> {
        let y = self.current_underlying * x_y.exp();
        let vol = smile_vol(
            y,
            self.current_atm_vol + x_sigma,
            self.strike,
            maturity,
            self.smile_alpha,
            self.smile_beta,
        )?;
        bs_price(y, vol, self.strike, maturity, self.risk_free)
    }

    /// Price today, at full maturity and current spot and vol.
    pub fn current_price(&self) -> Result<f64> {
        self.validate()?;
        self.price_at(0.0, 0.0, self.expiry)
    }

    /// `d P / d x_y` at the null scenario, by central difference.
    pub fn delta(&self) -> Result<f64> {
        let up = horizon_price(self, DELTA_BUMP, 0.0)?;
        let down = horizon_price(self, -DELTA_BUMP, 0.0)?;
        Ok((up - down) / (2.0 * DELTA_BUMP))
    }
}

/// Price at the horizon after the underlying moves by `x_y` in log terms and the ATM vol by `x_sigma`.
pub fn horizon_price(contract: &ButterflyContract, x_y: f64, x_sigma: f64) -> Result<f64> {
    contract.validate()?;
    contract.price_at(x_y, x_sigma, contract.expiry - contract.horizon)
}

pub fn load_book(path: impl AsRef<Path>) -> Result<Vec<ButterflyContract>> {
    let book: Vec<ButterflyContract> =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    for c in &book {
        c.validate()?;
    }
    Ok(book)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub epsilon: f64,
    pub num_scenarios: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(num_scenarios: usize, seed: u64) -> Self {
        Self {
            epsilon: 0.15,
            num_scenarios,
            seed,
        }
    }
}

/// Sample covariance with divisor `T - 1`.
pub fn sample_covariance(history: &ScenarioPanel) -> DMatrix<f64> {
    let (t, n) = (history.num_scenarios(), history.num_factors());
    let mut mean = vec![0.0; n];
    for row in history.rows() {
        mean.iter_mut()
            .zip(row)
            .for_each(|(m, v)| *m += v / t as f64);
    }
    let mut cov = DMatrix::zeros(n, n);
    for row in history.rows() {
        for a in 0..n {
            let da = row[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..n {
        for b in 0..=a {
            let v = cov[(a, b)] / (t - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Resamples each history row `floor(J / T)` times from `N(x_t, epsilon Sigma)`;
/// the first `J mod T` rows get one extra draw.
pub fn kernel_bootstrap(
    history: &ScenarioPanel,
    config: &BootstrapConfig,
) -> Result<(ScenarioPanel, ProbabilityVector)> {
    let (t_obs, n) = (history.num_scenarios(), history.num_factors());
    if t_obs < n + 1 {
        return Err(Error::InvalidPanel(format!(
            "{t_obs} observations cannot estimate a {n}-factor covariance"
        )));
    }
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidPanel(format!(
            "bandwidth {} must be positive",
            config.epsilon
        )));
    }
    if config.num_scenarios < t_obs {
        return Err(Error::InvalidPanel(format!(
            "J = {} is below the history length {t_obs}",
            config.num_scenarios
        )));
    }
    let mut cov = sample_covariance(history) * config.epsilon;
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-12 * cov.diagonal().amax().max(f64::MIN_POSITIVE);
            for i in 0..n {
                cov[(i, i)] += ridge;
            }
            cov.cholesky()
                .ok_or_else(|| Error::InvalidPanel("degenerate history covariance".into()))?
        }
    };
    let l = chol.l();
    let per_row = config.num_scenarios / t_obs;
    let extra = config.num_scenarios % t_obs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data = Vec::with_capacity(config.num_scenarios * n);
    for (i, row) in history.rows().enumerate() {
        let draws = per_row + usize::from(i < extra);
        for _ in 0..draws {
            let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let shock = &l * z;
            data.extend(row.iter().zip(shock.iter()).map(|(a, b)| a + b));
        }
    }
    let panel = ScenarioPanel::new(history.factor_names().to_vec(), data)?;
    Ok((panel, ProbabilityVector::uniform(config.num_scenarios)))
}

/// `J x I` panel of horizon p&l per contract.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    instrument_ids: Vec<String>,
    data: Vec<f64>,
}

impl PricePanel {
    pub fn new(instrument_ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let i = instrument_ids.len();
        if i == 0 || data.is_empty() || data.len() % i != 0 {
            return Err(Error::InvalidPanel(format!(
                "{} entries do not fill {i} columns",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!("non-finite p&l at entry {k}")));
        }
        Ok(Self {
            instrument_ids,
            data,
        })
    }

    pub fn instrument_ids(&self) -> &[String] {
        &self.instrument_ids
    }

    pub fn num_instruments(&self) -> usize {
        self.instrument_ids.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.data.len() / self.num_instruments()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let i = self.num_instruments();
        &self.data[j * i..(j + 1) * i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.num_scenarios()).map(|j| self.row(j)[i]).collect()
    }

    /// Scenario p&l of holdings `w`.
    pub fn portfolio_pnl(&self, w: &[f64]) -> Vec<f64> {
        (0..self.num_scenarios())
            .map(|j| self.row(j).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Probability-weighted mean vector and covariance matrix of the columns.
    pub fn moments(&self, p: &ProbabilityVector) -> Result<(DVector<f64>, DMatrix<f64>)> {
        p.check_len(self.num_scenarios())?;
        let n = self.num_instruments();
        let mut mean = DVector::zeros(n);
        for (j, w) in p.as_slice().iter().enumerate() {
            for (m, v) in mean.iter_mut().zip(self.row(j)) {
                *m += w * v;
            }
        }
        let mut cov = DMatrix::zeros(n, n);
        for (j, w) in p.as_slice().iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let row = self.row(j);
            for a in 0..n {
                let da = w * (row[a] - mean[a]);
                for b in 0..=a {
                    cov[(a, b)] += da * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        Ok((mean, cov))
    }
}

pub fn current_prices(book: &[ButterflyContract]) -> Result<Vec<f64>> {
    book.iter().map(ButterflyContract::current_price).collect()
}

/// Entry `(j, i)` is the horizon price of contract `i` under scenario `j` minus its current price.
pub fn build_pnl_panel(
    panel: &ScenarioPanel,
    book: &[ButterflyContract],
    current: &[f64],
) -> Result<PricePanel> {
    if current.len() != book.len() {
        return Err(Error::LengthMismatch {
            expected: book.len(),
            actual: current.len(),
        });
    }
    let mut columns = Vec::with_capacity(book.len());
    for c in book {
        c.validate()?;
        let y = panel
            .factor_index(&c.underlying_id)
            .ok_or_else(|| Error::UnknownColumn(c.underlying_id.clone()))?;
        let s = panel
            .factor_index(&c.vol_factor)
            .ok_or_else(|| Error::UnknownColumn(c.vol_factor.clone()))?;
        columns.push((y, s));
    }
    let mut data = Vec::with_capacity(panel.num_scenarios() * book.len());
    for (j, row) in panel.rows().enumerate() {
        for ((c, &(y, s)), p0) in book.iter().zip(&columns).zip(current) {
            let price = horizon_price(c, row[y], row[s]).map_err(|e| match e {
                Error::NonPositiveVolatility { vol, .. } => {
                    Error::NonPositiveVolatility { scenario: j, vol }
                }
                other => other,
            })?;
            data.push(price - p0);
        }
    }
    PricePanel::new(book.iter().map(|c| c.id.clone()).collect(), data)
}

/// Rows `lower <= B w <= upper`; equal bounds make an equality.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearPositionConstraints {
    pub rows: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearPositionConstraints {
    pub fn push(&mut self, row: Vec<f64>, lower: f64, upper: f64) {
        self.rows.push(row);
        self.lower.push(lower);
        self.upper.push(upper);
    }

    /// Zero net delta per underlying and zero initial budget.
    pub fn delta_and_budget(book: &[ButterflyContract]) -> Result<Self> {
        let mut out = Self::default();
        let mut by_underlying: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (i, c) in book.iter().enumerate() {
            let row = by_underlying
                .entry(c.underlying_id.as_str())
                .or_insert_with(|| vec![0.0; book.len()]);
            row[i] = c.delta()?;
        }
        for row in by_underlying.into_values() {
            out.push(row, 0.0, 0.0);
        }
        out.push(current_prices(book)?, 0.0, 0.0);
        Ok(out)
    }

    pub fn max_violation(&self, w: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(row, (lo, hi))| {
                let v: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
                (lo - v).max(v - hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSpec {
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    /// Absolute cap on each position.
    pub position_bounds: Vec<f64>,
    pub linear_constraints: LinearPositionConstraints,
    /// Number of variance targets on the mean-variance step.
    #[serde(default = "default_targets")]
    pub variance_targets: usize,
}

fn default_targets() -> usize {
    30
}

impl FrontierSpec {
    pub fn new(
        gamma: f64,
        lambdas: Vec<f64>,
        position_bounds: Vec<f64>,
        linear_constraints: LinearPositionConstraints,
    ) -> Self {
        Self {
            gamma,
            lambdas,
            position_bounds,
            linear_constraints,
            variance_targets: default_targets(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::LevelOutOfRange(self.gamma));
        }
        if self.position_bounds.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.position_bounds.len(),
            });
        }
        if self
            .position_bounds
            .iter()
            .any(|b| !(*b > 0.0 && b.is_finite()))
        {
            return Err(Error::InfeasiblePortfolio(
                "position bounds must be positive".into(),
            ));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InfeasiblePortfolio(
                "risk aversion must be nonnegative".into(),
            ));
        }
        if self.variance_targets == 0 {
            return Err(Error::InfeasiblePortfolio(
                "need at least one variance target".into(),
            ));
        }
        let lc = &self.linear_constraints;
        if lc.lower.len() != lc.rows.len() || lc.upper.len() != lc.rows.len() {
            return Err(Error::LengthMismatch {
                expected: lc.rows.len(),
                actual: lc.lower.len(),
            });
        }
        for ((row, lo), hi) in lc.rows.iter().zip(&lc.lower).zip(&lc.upper) {
            if row.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            if !(lo <= hi) || *lo > 0.0 || *hi < 0.0 {
                return Err(Error::InfeasiblePortfolio(format!(
                    "bounds [{lo}, {hi}] exclude w = 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub expected_pnl: f64,
    pub cvar: f64,
    pub variance: f64,
}

/// Convex QP `min 1/2 w'Qw - c'w` with `E w = 0` and `G w <= g`, solved by a primal
/// active-set method started from the feasible point `w = 0`.
struct PositionQp {
    equalities: Vec<DVector<f64>>,
    inequalities: Vec<(DVector<f64>, f64)>,
}

impl PositionQp {
    fn new(spec: &FrontierSpec, n: usize) -> Self {
        let mut equalities: Vec<DVector<f64>> = Vec::new();
        let mut inequalities = Vec::new();
        let lc = &spec.linear_constraints;
        for ((row, &lo), &hi) in lc.rows.iter().zip(&lc.lower).zip(&lc.upper) {
            let a = DVector::from_column_slice(row);
            if lo == hi {
                // keep only rows independent of those already kept
                let mut r = a.clone();
                for e in &equalities {
                    r -= e * e.dot(&r);
                }
                if r.norm() > 1e-10 * a.norm().max(f64::MIN_POSITIVE) {
                    equalities.push(&r / r.norm());
                }
            } else {
                if hi.is_finite() {
                    inequalities.push((a.clone(), hi));
                }
                if lo.is_finite() {
                    inequalities.push((-a, -lo));
                }
            }
        }
        for (i, cap) in spec.position_bounds.iter().enumerate() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            inequalities.push((e.clone(), *cap));
            inequalities.push((-e, *cap));
        }
        Self {
            equalities,
            inequalities,
        }
    }

    fn solve(&self, q: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
        let n = c.len();
        let mut w = DVector::zeros(n);
        let mut working: Vec<usize> = Vec::new();
        let limit = 50 * (n + self.inequalities.len() + 1);
        for _ in 0..limit {
            let rows: Vec<&DVector<f64>> = self
                .equalities
                .iter()
                .chain(working.iter().map(|&i| &self.inequalities[i].0))
                .collect();
            let m = rows.len();
            let mut kkt = DMatrix::zeros(n + m, n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(q);
            for (k, a) in rows.iter().enumerate() {
                for i in 0..n {
                    kkt[(i, n + k)] = a[i];
                    kkt[(n + k, i)] = a[i];
                }
            }
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&(c - q * &w));
            let sol = kkt
                .full_piv_lu()
                .solve(&rhs)
                .ok_or_else(|| Error::InfeasiblePortfolio("singular KKT system".into()))?;
            let step = sol.rows(0, n).into_owned();
            let scale = w.amax().max(1.0);
            if step.amax() <= 1e-13 * scale {
                let eq = self.equalities.len();
                let most_negative = working
                    .iter()
                    .enumerate()
                    .map(|(k, _)| (k, sol[n + eq + k]))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match most_negative {
                    Some((k, mu)) if mu < -1e-12 => {
                        working.remove(k);
                        continue;
                    }
                    _ => return Ok(w),
                }
            }
            let mut alpha = 1.0;
            let mut blocking = None;
            for (i, (a, g)) in self.inequalities.iter().enumerate() {
                if working.contains(&i) {
                    continue;
                }
                let rate = a.dot(&step);
                if rate > 1e-14 * a.amax() {
                    let room = (g - a.dot(&w)).max(0.0) / rate;
                    if room < alpha {
                        alpha = room;
                        blocking = Some(i);
                    }
                }
            }
            w += &step * alpha;
            if let Some(i) = blocking {
                working.push(i);
            }
        }
        Err(Error::InfeasiblePortfolio(
            "active-set iteration limit".into(),
        ))
    }
}

/// Candidates from the penalized mean-variance problem, ordered by increasing variance; `w = 0` comes first.
fn mean_variance_candidates(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    spec: &FrontierSpec,
) -> Result<Vec<DVector<f64>>> {
    let n = mean.len();
    let qp = PositionQp::new(spec, n);
    let zero = DVector::zeros(n);
    let variance = |w: &DVector<f64>| w.dot(&(cov * w)).max(0.0);
    let cov_scale = cov.diagonal().amax().max(f64::MIN_POSITIVE);
    let ridge = 1e-12 * cov_scale;
    let cap = spec.position_bounds.iter().cloned().fold(0.0, f64::max);
    let mean_scale = mean.amax();
    if mean_scale == 0.0 {
        return Ok(vec![zero]);
    }
    let solve = |theta: f64| -> Result<DVector<f64>> {
        let q = cov * theta + DMatrix::identity(n, n) * ridge;
        qp.solve(&q, mean)
    };
    // theta measured in units that balance mean and variance at the caps
    let unit = mean_scale / (cov_scale * cap);
    let (lo_theta, hi_theta) = (unit * 1e-8, unit * 1e8);
    let top = solve(lo_theta)?;
    let v_max = variance(&top);
    let mut candidates = vec![zero];
    if v_max <= 0.0 {
        return Ok(candidates);
    }
    let k = spec.variance_targets;
    for t in 0..k {
        let frac = if k == 1 {
            1.0
        } else {
            t as f64 / (k - 1) as f64
        };
        let target = v_max * 10f64.powf(-6.0 * (1.0 - frac));
        if t + 1 == k {
            candidates.push(top.clone());
            break;
        }
        let (mut a, mut b) = (lo_theta.ln(), hi_theta.ln());
        let mut best = None;
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            let w = solve(mid.exp())?;
            let v = variance(&w);
            if v > target {
                a = mid;
            } else {
                b = mid;
            }
            best = Some(w);
            if (v - target).abs() <= 1e-6 * target {
                break;
            }
        }
        if let Some(w) = best {
            candidates.push(w);
        }
    }
    candidates.sort_by(|x, y| variance(x).total_cmp(&variance(y)));
    Ok(candidates)
}

/// Two-step mean-CVaR frontier: mean-variance candidates, then the exact sample
/// objective `E - lambda CVaR` per lambda. Ties go to the lowest variance.
pub fn mean_cvar_frontier(
    pnl: &PricePanel,
    p: &ProbabilityVector,
    spec: &FrontierSpec,
) -> Result<Vec<FrontierPoint>> {
    let n = pnl.num_instruments();
    spec.validate(n)?;
    let (mean, cov) = pnl.moments(p)?;
    let candidates = mean_variance_candidates(&mean, &cov, spec)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for w in &candidates {
        let weights: Vec<f64> = w.iter().copied().collect();
        let expected = mean.dot(w);
        let cvar = weighted_cvar(&pnl.portfolio_pnl(&weights), p, spec.gamma)?;
        scored.push((weights, expected, cvar, w.dot(&(&cov * w)).max(0.0)));
    }
    Ok(spec
        .lambdas
        .iter()
        .map(|&lambda| {
            let mut best = 0;
            let mut best_value = scored[0].1 - lambda * scored[0].2;
            for (k, s) in scored.iter().enumerate().skip(1) {
                let value = s.1 - lambda * s.2;
                if value > best_value {
                    best = k;
                    best_value = value;
                }
            }
            let (weights, expected_pnl, cvar, variance) = scored[best].clone();
            FrontierPoint {
                lambda,
                weights,
                expected_pnl,
                cvar,
                variance,
            }
        })
        .collect())
}

/// CSV with columns `lambda, w_<id>..., expected_pnl, cvar`.
pub fn write_frontier_csv<W: Write>(
    points: &[FrontierPoint],
    ids: &[String],
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["lambda".to_string()];
    header.extend(ids.iter().map(|id| format!("w_{id}")));
    header.extend(["expected_pnl".to_string(), "cvar".to_string()]);
    out.write_record(&header)?;
    for p in points {
        let mut rec = vec![format!("{:.16e}", p.lambda)];
        rec.extend(p.weights.iter().map(|w| format!("{w:.16e}")));
        rec.push(format!("{:.16e}", p.expected_pnl));
        rec.push(format!("{:.16e}", p.cvar));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn contract(id: &str, underlying: &str, vol: &str, expiry: f64) -> ButterflyContract {
        ButterflyContract {
            id: id.into(),
            underlying_id: underlying.into(),
            vol_factor: vol.into(),
            strike: 100.0,
            expiry,
            risk_free: 0.01,
            smile_alpha: -0.05,
            smile_beta: 0.1,
            current_underlying: 100.0,
            current_atm_vol: 0.25,
            horizon: 1.0 / 252.0,
        }
    }

    fn call_plus_put(y: f64, s: f64, k: f64, t: f64, r: f64) -> f64 {
        let n = Normal::standard();
        let d1 = ((y / k).ln() + (r + s * s / 2.0) * t) / (s * t.sqrt());
        let d2 = d1 - s * t.sqrt();
        let call = y * n.cdf(d1) - k * (-r * t).exp() * n.cdf(d2);
        let put = k * (-r * t).exp() * n.cdf(-d2) - y * n.cdf(-d1);
        call + put
    }

    #[test]
    fn bs_atm_example_and_limits() {
        let p = bs_price(100.0, 0.2, 100.0, 1.0, 0.0).unwrap();
        assert!((p - 15.9311).abs() < 1e-3, "{p}");
        assert!((p - call_plus_put(100.0, 0.2, 100.0, 1.0, 0.0)).abs() < 1e-10);
        for (y, k) in [(100.0, 100.0), (120.0, 100.0), (80.0, 100.0)] {
            assert!((bs_price(y, 1e-8, k, 1.0, 0.0).unwrap() - (y - k as f64).abs()).abs() < 1e-6);
        }
        let mut last = 0.0;
        for i in 1..60 {
            let v = bs_price(95.0, 0.01 * i as f64, 100.0, 0.5, 0.02).unwrap();
            assert!(v > last);
            last = v;
        }
        assert!(bs_price(-1.0, 0.2, 100.0, 1.0, 0.0).is_err());
        assert!(bs_price(100.0, 0.0, 100.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn call_plus_put_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let y = rng.random_range(50.0..150.0);
            let s = rng.random_range(0.05..0.8);
            let t = rng.random_range(0.02..3.0);
            let r = rng.random_range(-0.01..0.08);
            let got = bs_price(y, s, 100.0, t, r).unwrap();
            assert!((got - call_plus_put(y, s, 100.0, t, r)).abs() < 1e-10);
        }
    }

    #[test]
    fn smile_examples() {
        assert_eq!(smile_vol(100.0, 0.3, 100.0, 0.5, -0.2, 0.4).unwrap(), 0.3);
        assert_eq!(smile_vol(120.0, 0.3, 100.0, 0.5, 0.0, 0.0).unwrap(), 0.3);
        let atm = smile_vol(100.0, 0.3, 100.0, 0.5, 0.0, 0.2).unwrap();
        for y in [60.0, 80.0, 99.0, 101.0, 130.0, 200.0] {
            assert!(smile_vol(y, 0.3, 100.0, 0.5, 0.0, 0.2).unwrap() >= atm);
        }
        assert!(matches!(
            smile_vol(200.0, 0.1, 100.0, 0.5, -0.5, 0.0),
            Err(Error::NonPositiveVolatility { .. })
        ));
    }

    #[test]
    fn horizon_price_examples() {
        let c = contract("M1m", "M", "M1m", 1.0 / 12.0);
        let null = horizon_price(&c, 0.0, 0.0).unwrap();
        let direct = bs_price(100.0, 0.25, 100.0, c.expiry - c.horizon, c.risk_free).unwrap();
        assert_eq!(null, direct);
        let mut still = c.clone();
        still.horizon = 0.0;
        assert!(
            (horizon_price(&still, 0.0, 0.0).unwrap() - still.current_price().unwrap()).abs()
                < 1e-9
        );
        let mut flat = c.clone();
        flat.risk_free = 0.0;
        flat.smile_alpha = 0.0;
        flat.smile_beta = 0.0;
        let mut prev = horizon_price(&flat, 0.0, 0.0).unwrap();
        for k in 1..20 {
            let x = 0.01 * k as f64;
            let up = horizon_price(&flat, x, 0.0).unwrap();
            let down = horizon_price(&flat, -x, 0.0).unwrap();
            assert!(up > prev && down > prev);
            prev = up.min(down);
        }
        let mut bad = c.clone();
        bad.horizon = bad.expiry;
        assert!(horizon_price(&bad, 0.0, 0.0).is_err());
        assert!(horizon_price(&c, 0.0, -0.3).is_err());
    }

    #[test]
    fn delta_is_small_for_atm_straddle() {
        let mut c = contract("a", "M", "M1m", 0.5);
        c.risk_free = 0.0;
        c.smile_alpha = 0.0;
        c.smile_beta = 0.0;
        let d = c.delta().unwrap();
        // straddle delta is y (2 Phi(d1) - 1), small near the money
        let t = c.expiry - c.horizon;
        let d1 = 0.5 * 0.25 * t.sqrt();
        let expected = 100.0 * (2.0 * Normal::standard().cdf(d1) - 1.0);
        assert!((d - expected).abs() < 1e-4, "{d} vs {expected}");
    }

    fn history(t: usize, seed: u64) -> ScenarioPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![0.01 * a, 0.005 * (0.5 * a + b), 0.002 * b]
            })
            .collect();
        ScenarioPanel::from_rows(vec!["a".into(), "b".into(), "c".into()], &rows).unwrap()
    }

    #[test]
    fn bootstrap_counts_and_moments() {
        let h = history(700, 1);
        let (panel, p) = kernel_bootstrap(&h, &BootstrapConfig::new(100_000, 9)).unwrap();
        assert_eq!(panel.num_scenarios(), 100_000);
        assert_eq!(p.len(), 100_000);
        assert_eq!(100_000 / 700, 142);
        assert_eq!(100_000 % 700, 600);
        for k in 0..3 {
            let hist_mean = h.column(k).iter().sum::<f64>() / 700.0;
            let col = panel.column(k);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd =
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!((mean - hist_mean).abs() < 4.0 * sd / (col.len() as f64).sqrt());
        }
        let (again, _) = kernel_bootstrap(&h, &BootstrapConfig::new(100_000, 9)).unwrap();
        assert_eq!(panel, again);
    }

    #[test]
    fn tiny_bandwidth_repeats_history() {
        let h = history(50, 2);
        let cfg = BootstrapConfig {
            epsilon: 1e-20,
            num_scenarios: 125,
            seed: 3,
        };
        let (panel, _) = kernel_bootstrap(&h, &cfg).unwrap();
        let mut j = 0;
        for (i, row) in h.rows().enumerate() {
            let draws = 2 + usize::from(i < 25);
            for _ in 0..draws {
                for (a, b) in panel.row(j).iter().zip(row) {
                    assert!((a - b).abs() < 1e-9);
                }
                j += 1;
            }
        }
        assert!(kernel_bootstrap(&history(3, 1), &BootstrapConfig::new(10, 1)).is_err());
        assert!(kernel_bootstrap(&h, &BootstrapConfig::new(10, 1)).is_err());
    }

    fn small_book() -> Vec<ButterflyContract> {
        let mut book = Vec::new();
        for (u, spot) in [("a", 100.0), ("c", 40.0)] {
            for (tenor, t) in [("1m", 1.0 / 12.0), ("6m", 0.5)] {
                let mut c = contract(&format!("{u}{tenor}"), u, "b", t);
                c.current_underlying = spot;
                c.strike = spot;
                book.push(c);
            }
        }
        book
    }

    #[test]
    fn pnl_panel_structure() {
        let h = history(40, 4);
        let book = small_book();
        let current = current_prices(&book).unwrap();
        let pnl = build_pnl_panel(&h, &book, &current).unwrap();
        assert_eq!(pnl.num_instruments(), 4);
        assert_eq!(pnl.num_scenarios(), 40);
        let zero = ScenarioPanel::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            &[vec![0.0; 3], vec![0.0; 3]],
        )
        .unwrap();
        let theta = build_pnl_panel(&zero, &book, &current).unwrap();
        for (i, c) in book.iter().enumerate() {
            let expected = horizon_price(c, 0.0, 0.0).unwrap() - c.current_price().unwrap();
            assert_eq!(theta.row(0)[i], expected);
            assert!(expected < 0.0);
        }
        let w = [1.0, -2.0, 0.5, 3.0];
        let double: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        for (a, b) in pnl.portfolio_pnl(&w).iter().zip(pnl.portfolio_pnl(&double)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let mut missing = book.clone();
        missing[0].vol_factor = "nope".into();
        assert!(matches!(
            build_pnl_panel(&h, &missing, &current),
            Err(Error::UnknownColumn(_))
        ));
    }

    /// Three instruments with Gaussian p&l and a budget row `w1 + w2 + w3 = 0`.
    fn gaussian_instance(
        seed: u64,
        j: usize,
    ) -> (PricePanel, ProbabilityVector, LinearPositionConstraints) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drift = [0.3, -0.1, 0.05];
        let vol = [1.0, 0.7, 1.3];
        let mut data = Vec::with_capacity(3 * j);
        for _ in 0..j {
            let common: f64 = StandardNormal.sample(&mut rng);
            for i in 0..3 {
                let e: f64 = StandardNormal.sample(&mut rng);
                data.push(drift[i] + vol[i] * (0.4 * common + e));
            }
        }
        let pnl = PricePanel::new(vec!["x".into(), "y".into(), "z".into()], data).unwrap();
        let mut lc = LinearPositionConstraints::default();
        lc.push(vec![1.0, 1.0, 1.0], 0.0, 0.0);
        (pnl, ProbabilityVector::uniform(j), lc)
    }

    #[test]
    fn frontier_extremes_and_monotonicity() {
        let (pnl, p, lc) = gaussian_instance(5, 4000);
        let lambdas = vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 1e6];
        let spec = FrontierSpec::new(0.95, lambdas, vec![1.0; 3], lc.clone());
        let frontier = mean_cvar_frontier(&pnl, &p, &spec).unwrap();
        let last = frontier.last().unwrap();
        assert!(last.weights.iter().all(|w| *w == 0.0));
        assert_eq!(last.expected_pnl, 0.0);
        for pair in frontier.windows(2) {
            assert!(pair[1].expected_pnl <= pair[0].expected_pnl + 1e-12);
        }
        for point in &frontier {
            assert!(lc.max_violation(&point.weights) <= 1e-9);
            assert!(point.weights.iter().all(|w| w.abs() <= 1.0 + 1e-9));
        }
        assert!(frontier[0]
            .weights
            .iter()
            .any(|w| (w.abs() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn zero_lambda_matches_grid_search() {
        let (pnl, p, lc) = gaussian_instance(6, 2000);
        let spec = FrontierSpec::new(0.95, vec![0.0], vec![1.0; 3], lc);
        let point = &mean_cvar_frontier(&pnl, &p, &spec).unwrap()[0];
        let (mean, _) = pnl.moments(&p).unwrap();
        let mut best = f64::NEG_INFINITY;
        let steps = 200;
        for a in 0..=steps {
            for b in 0..=steps {
                let w1 = -1.0 + 2.0 * a as f64 / steps as f64;
                let w2 = -1.0 + 2.0 * b as f64 / steps as f64;
                let w3 = -w1 - w2;
                if w3.abs() <= 1.0 {
                    best = best.max(mean[0] * w1 + mean[1] * w2 + mean[2] * w3);
                }
            }
        }
        assert!(
            point.expected_pnl >= best - 1e-6,
            "{} vs {best}",
            point.expected_pnl
        );
        assert!(
            point
                .weights
                .iter()
                .filter(|w| (w.abs() - 1.0).abs() < 1e-6)
                .count()
                >= 1
        );
    }

    #[test]
    fn heuristic_dominates_random_feasible_portfolios() {
        let (pnl, p, lc) = gaussian_instance(7, 3000);
        let lambdas = vec![0.0, 0.1, 0.3, 1.0];
        let spec = FrontierSpec::new(0.95, lambdas.clone(), vec![1.0; 3], lc);
        let frontier = mean_cvar_frontier(&pnl, &p, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let samples: Vec<(f64, f64)> = (0..1000)
            .filter_map(|_| {
                let w1: f64 = rng.random_range(-1.0..1.0);
                let w2: f64 = rng.random_range(-1.0..1.0);
                let w = [w1, w2, -w1 - w2];
                if w[2].abs() > 1.0 {
                    return None;
                }
                let pnl_w = pnl.portfolio_pnl(&w);
                let e: f64 = pnl_w.iter().zip(p.as_slice()).map(|(a, b)| a * b).sum();
                Some((e, weighted_cvar(&pnl_w, &p, 0.95).unwrap()))
            })
            .collect();
        assert!(samples.len() > 500);
        for point in &frontier {
            let value = point.expected_pnl - point.lambda * point.cvar;
            let sampled = samples
                .iter()
                .map(|(e, c)| e - point.lambda * c)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                value >= sampled - 1e-9,
                "lambda {}: {value} < {sampled}",
                point.lambda
            );
        }
    }

    #[test]
    fn frontier_rejects_bad_specs() {
        let (pnl, p, lc) = gaussian_instance(8, 200);
        let mut spec = FrontierSpec::new(1.5, vec![0.0], vec![1.0; 3], lc.clone());
        assert!(mean_cvar_frontier(&pnl, &p, &spec).is_err());
        spec.gamma = 0.9;
        spec.position_bounds = vec![1.0; 2];
        assert!(mean_cvar_frontier(&pnl, &p, &spec).is_err());
        let mut shifted = lc;
        shifted.lower[0] = 1.0;
        shifted.upper[0] = 1.0;
        let spec = FrontierSpec::new(0.9, vec![0.0], vec![1.0; 3], shifted);
        assert!(matches!(
            mean_cvar_frontier(&pnl, &p, &spec),
            Err(Error::InfeasiblePortfolio(_))
        ));
    }

    #[test]
    fn frontier_csv_layout() {
        let points = vec![FrontierPoint {
            lambda: 0.5,
            weights: vec![1.0, -1.0],
            expected_pnl: 0.25,
            cvar: 2.0,
            variance: 1.0,
        }];
        let mut buf = Vec::new();
        write_frontier_csv(&points, &["a".into(), "b".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "lambda,w_a,w_b,expected_pnl,cvar");
        let values: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(values, vec![0.5, 1.0, -1.0, 0.25, 2.0]);
    }
}
