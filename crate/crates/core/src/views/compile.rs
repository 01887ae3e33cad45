use super::{
    ConstraintRow, Direction, Level, LinearConstraintSet, TargetSample, TargetSpec, View, ViewKind,
};
use crate::error::{Error, Result};
use crate::scenario::{
    empirical_copula_ranks, weighted_mean, weighted_quantile, weighted_std, ProbabilityVector,
    ScenarioPanel, ViewPanel,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    /// Upper bound on rows produced by one moment-matching view.
    pub moment_row_cap: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            moment_row_cap: 200,
        }
    }
}

/// A compiled row together with its relation to the right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledRow {
    pub relation: Direction,
    pub row: ConstraintRow,
}

impl CompiledRow {
    fn new(relation: Direction, label: String, coefficients: Vec<f64>, rhs: f64) -> Self {
        Self {
            relation,
            row: ConstraintRow::new(label, coefficients, rhs),
        }
    }

    /// Whether `p` satisfies the row within `tol`.
    pub fn holds_at(&self, p: &[f64], tol: f64) -> bool {
        let lhs = self.row.dot(p);
        match self.relation {
            Direction::AtMost => lhs <= self.row.rhs + tol,
            Direction::AtLeast => lhs >= self.row.rhs - tol,
            Direction::Equal => (lhs - self.row.rhs).abs() <= tol,
        }
    }
}

fn push(set: &mut LinearConstraintSet, compiled: CompiledRow) -> Result<()> {
    match compiled.relation {
        Direction::AtMost => set.push_le(compiled.row),
        Direction::AtLeast => set.push_ge(compiled.row),
        Direction::Equal => set.push_eq(compiled.row),
    }
}

fn flip(d: Direction) -> Direction {
    match d {
        Direction::AtMost => Direction::AtLeast,
        Direction::AtLeast => Direction::AtMost,
        Direction::Equal => Direction::Equal,
    }
}

fn column<'a>(view_panel: &'a ViewPanel, label: &str) -> Result<&'a [f64]> {
    view_panel.column_by_label(label)
}

fn single_column<'a>(view: &View, view_panel: &'a ViewPanel) -> Result<&'a [f64]> {
    let label = view
        .columns
        .first()
        .ok_or_else(|| Error::InvalidView(format!("{:?} view without columns", view.kind)))?;
    column(view_panel, label)
}

fn expect_kind(view: &View, kinds: &[ViewKind]) -> Result<()> {
    if kinds.contains(&view.kind) {
        Ok(())
    } else {
        Err(Error::InvalidView(format!(
            "expected {kinds:?}, got {:?}",
            view.kind
        )))
    }
}

fn unsupported(view: &View) -> Error {
    Error::InvalidView(format!(
        "target {:?} is not supported for {:?}",
        view.target, view.kind
    ))
}

fn scalar_level(view: &View) -> Result<f64> {
    match &view.level {
        Some(Level::Scalar(u)) => Ok(*u),
        Some(Level::Vector(v)) if v.len() == 1 => Ok(v[0]),
        _ => Err(Error::InvalidView(format!(
            "{:?} needs a scalar `level`",
            view.kind
        ))),
    }
}

/// Prior `(1/2 + kappa/5)`-tile.
fn shifted_tile(col: &[f64], prior: &ProbabilityVector, kappa: f64) -> Result<f64> {
    weighted_quantile(col, prior, 0.5 + kappa / 5.0)
}

fn prior_mean_std(view: &View, col: &[f64], prior: &ProbabilityVector) -> Result<(f64, f64)> {
    let m = weighted_mean(col, prior)?;
    let s = weighted_std(col, prior)?;
    if s == 0.0 {
        return Err(Error::ZeroDispersion(view.columns.join(", ")));
    }
    Ok((m, s))
}

/// Location reference `m_k` shared by mean and median views.
fn resolve_location(view: &View, col: &[f64], prior: &ProbabilityVector) -> Result<f64> {
    match view.target {
        Some(TargetSpec::Absolute(v)) => Ok(v),
        Some(TargetSpec::KappaSigma(kappa)) => {
            let (m, s) = prior_mean_std(view, col, prior)?;
            Ok(m + kappa * s)
        }
        Some(TargetSpec::QuantileShift(kappa)) => shifted_tile(col, prior, kappa),
        _ => Err(unsupported(view)),
    }
}

fn indicator(col: &[f64], pred: impl Fn(f64) -> bool) -> Vec<f64> {
    col.iter()
        .map(|v| if pred(*v) { 1.0 } else { 0.0 })
        .collect()
}

fn nonempty(label: &str, coefficients: &[f64]) -> Result<()> {
    if coefficients.iter().all(|c| *c == 0.0) {
        Err(Error::ZeroRow(label.to_string()))
    } else {
        Ok(())
    }
}

/// `sum_j p~_j V_jk <dir> m_k`.
pub fn compile_mean_location(
    view: &View,
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::MeanLocation])?;
    let col = single_column(view, view_panel)?;
    let rhs = resolve_location(view, col, prior)?;
    Ok(vec![CompiledRow::new(
        view.direction,
        format!("mean[{}]", view.columns[0]),
        col.to_vec(),
        rhs,
    )])
}

/// Median above `t` compiles to `P~(V < t) <= 1/2`; median below `t` to
/// `P~(V > t) <= 1/2`. Scenarios equal to `t` are in neither set.
pub fn compile_median_location(
    view: &View,
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::MedianLocation])?;
    let col = single_column(view, view_panel)?;
    let t = resolve_location(view, col, prior)?;
    let name = &view.columns[0];
    let below = || {
        let label = format!("median[{name}]>={t}");
        let c = indicator(col, |v| v < t);
        nonempty(&label, &c).map(|_| CompiledRow::new(Direction::AtMost, label, c, 0.5))
    };
    let above = || {
        let label = format!("median[{name}]<={t}");
        let c = indicator(col, |v| v > t);
        nonempty(&label, &c).map(|_| CompiledRow::new(Direction::AtMost, label, c, 0.5))
    };
    match view.direction {
        Direction::AtLeast => Ok(vec![below()?]),
        Direction::AtMost => Ok(vec![above()?]),
        Direction::Equal => Ok(vec![below()?, above()?]),
    }
}

/// `m(V_1) <dir> m(V_2) <dir> ... <dir> m(V_K)` on expectations: `K - 1` rows.
pub fn compile_ranking(view: &View, view_panel: &ViewPanel) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::Ranking])?;
    if view.columns.len() < 2 {
        return Err(Error::InvalidView(
            "ranking needs at least 2 columns".into(),
        ));
    }
    let cols = view
        .columns
        .iter()
        .map(|c| column(view_panel, c))
        .collect::<Result<Vec<_>>>()?;
    cols.windows(2)
        .zip(view.columns.windows(2))
        .map(|(pair, names)| {
            let label = format!("rank[{}|{}]", names[0], names[1]);
            let c: Vec<f64> = pair[0].iter().zip(pair[1]).map(|(a, b)| a - b).collect();
            nonempty(&label, &c)?;
            Ok(CompiledRow::new(view.direction, label, c, 0.0))
        })
        .collect()
}

/// `sum_j p~_j V_jk^2 <dir> m_hat^2 + sigma_k^2`.
pub fn compile_volatility_std(
    view: &View,
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::VolatilityStd])?;
    let col = single_column(view, view_panel)?;
    let m = weighted_mean(col, prior)?;
    let sigma = match view.target {
        Some(TargetSpec::Absolute(s)) if s >= 0.0 => s,
        Some(TargetSpec::ReferenceMultiple(kappa)) if kappa >= 0.0 => {
            kappa * weighted_std(col, prior)?
        }
        _ => return Err(unsupported(view)),
    };
    Ok(vec![CompiledRow::new(
        view.direction,
        format!("vol[{}]", view.columns[0]),
        col.iter().map(|v| v * v).collect(),
        m * m + sigma * sigma,
    )])
}

/// Dispersion as the range between the `(1/2 - gamma)` and `(1/2 + gamma)` tiles,
/// compared with `kappa` times the prior range: two tail-mass rows.
pub fn compile_volatility_quantile_range(
    view: &View,
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
    gamma: f64,
) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::VolatilityQuantileRange])?;
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::InvalidView(format!(
            "quantile half-width {gamma} outside (0, 1/2)"
        )));
    }
    let kappa = match view.target {
        None => 1.0,
        Some(TargetSpec::ReferenceMultiple(k)) if k > 0.0 => k,
        _ => return Err(unsupported(view)),
    };
    let spread = kappa * gamma;
    if spread >= 0.5 {
        return Err(Error::InvalidView(format!(
            "kappa * gamma = {spread} collapses the quantile range"
        )));
    }
    let col = single_column(view, view_panel)?;
    let lo = weighted_quantile(col, prior, 0.5 - spread)?;
    let hi = weighted_quantile(col, prior, 0.5 + spread)?;
    let name = &view.columns[0];
    let lower_label = format!("range-low[{name}]<{lo}");
    let upper_label = format!("range-high[{name}]>{hi}");
    let lower = indicator(col, |v| v < lo);
    let upper = indicator(col, |v| v > hi);
    nonempty(&lower_label, &lower)?;
    nonempty(&upper_label, &upper)?;
    Ok(vec![
        CompiledRow::new(view.direction, lower_label, lower, 0.5 - gamma),
        CompiledRow::new(view.direction, upper_label, upper, 0.5 - gamma),
    ])
}

/// Homogeneous shrinkage target for an off-diagonal entry:
/// `rho1 * 0 + rho2 * prior + rho3 * 1`.
pub fn shrinkage_correlation(rho: [f64; 3], prior_correlation: f64) -> Result<f64> {
    let total: f64 = rho.iter().sum();
    if rho.iter().any(|r| !(0.0..=1.0).contains(r)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidView(format!(
            "shrinkage weights {rho:?} must be in [0,1] and sum to 1"
        )));
    }
    Ok(rho[1] * prior_correlation + rho[2])
}

/// Cross-moment row `sum_j p~_j V_jk V_jl = m_k m_l + s_k s_l C~_kl`, with
/// optional anchor rows fixing both means and second moments at their prior values.
pub fn compile_correlation_stress(
    view: &View,
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::CorrelationStress])?;
    if view.columns.len() != 2 {
        return Err(Error::InvalidView(
            "correlation stress needs exactly 2 columns".into(),
        ));
    }
    let target = match view.target {
        Some(TargetSpec::Absolute(r)) if (-1.0..=1.0).contains(&r) => r,
        _ => {
            return Err(Error::InvalidView(
                "correlation target must be absolute, in [-1, 1]".into(),
            ))
        }
    };
    let a = column(view_panel, &view.columns[0])?;
    let b = column(view_panel, &view.columns[1])?;
    let (ma, sa) = prior_mean_std(view, a, prior)?;
    let (mb, sb) = prior_mean_std(view, b, prior)?;
    let (na, nb) = (&view.columns[0], &view.columns[1]);
    let mut rows = vec![CompiledRow::new(
        view.direction,
        format!("corr[{na}|{nb}]"),
        a.iter().zip(b).map(|(x, y)| x * y).collect(),
        ma * mb + sa * sb * target,
    )];
    if view.anchor.unwrap_or(true) {
        for (name, col, m, s) in [(na, a, ma, sa), (nb, b, mb, sb)] {
            rows.push(CompiledRow::new(
                Direction::Equal,
                format!("anchor-mean[{name}]"),
                col.to_vec(),
                m,
            ));
            rows.push(CompiledRow::new(
                Direction::Equal,
                format!("anchor-second[{name}]"),
                col.iter().map(|v| v * v).collect(),
                m * m + s * s,
            ));
        }
    }
    Ok(rows)
}

/// Posterior `u`-quantile `<dir>` `t`, via the posterior mass strictly below `t`:
/// quantile above `t` means at most `u` of the mass lies below it.
pub fn compile_quantile_tail(
    view: &View,
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
    u: f64,
) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::QuantileTail])?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::LevelOutOfRange(u));
    }
    let col = single_column(view, view_panel)?;
    let t = match view.target {
        None => weighted_quantile(col, prior, u)?,
        Some(TargetSpec::Absolute(t)) => t,
        Some(TargetSpec::QuantileShift(kappa)) => shifted_tile(col, prior, kappa)?,
        _ => return Err(unsupported(view)),
    };
    let label = format!("quantile[{}]@{u}<{t}", view.columns[0]);
    let c = indicator(col, |v| v < t);
    nonempty(&label, &c)?;
    Ok(vec![CompiledRow::new(flip(view.direction), label, c, u)])
}

/// Joint tail mass `sum_{j in I_u} p~_j <dir> C~`, where `I_u` holds the
/// scenarios whose copula ranks are all at or below the thresholds.
pub fn compile_tail_codependence(
    view: &View,
    copula_ranks: &[&[f64]],
    prior: &ProbabilityVector,
    thresholds: &[f64],
) -> Result<Vec<CompiledRow>> {
    expect_kind(view, &[ViewKind::TailCodependence])?;
    if thresholds.len() != copula_ranks.len() {
        return Err(Error::LengthMismatch {
            expected: copula_ranks.len(),
            actual: thresholds.len(),
        });
    }
    if thresholds.iter().any(|u| !(*u > 0.0 && *u <= 1.0)) {
        return Err(Error::InvalidView(format!(
            "copula thresholds {thresholds:?} outside (0, 1]"
        )));
    }
    let j = prior.len();
    let coefficients: Vec<f64> = (0..j)
        .map(|s| {
            let inside = copula_ranks
                .iter()
                .zip(thresholds)
                .all(|(ranks, u)| ranks[s] <= u + 1e-12);
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let label = format!(
        "tail-codependence[{}]@{thresholds:?}",
        view.columns.join(",")
    );
    nonempty(&label, &coefficients)?;
    let rhs = match view.target {
        Some(TargetSpec::Absolute(c)) => c,
        Some(TargetSpec::ReferenceMultiple(kappa)) => {
            kappa
                * coefficients
                    .iter()
                    .zip(prior.as_slice())
                    .map(|(c, p)| c * p)
                    .sum::<f64>()
        }
        _ => return Err(unsupported(view)),
    };
    Ok(vec![CompiledRow::new(
        view.direction,
        label,
        coefficients,
        rhs,
    )])
}

/// Multi-indices (exponents per column) enumerated for a moment view.
fn moment_exponents(kind: ViewKind, columns: usize, order: usize) -> Vec<Vec<usize>> {
    let mut all = Vec::new();
    // every exponent vector with total degree in 1..=order, graded then lexicographic
    for degree in 1..=order {
        let mut current = vec![0; columns];
        enumerate_degree(&mut current, 0, degree, &mut all);
    }
    match kind {
        ViewKind::JointMoments => all,
        ViewKind::MarginalMoments => all
            .into_iter()
            .filter(|e| e.iter().filter(|x| **x > 0).count() == 1)
            .collect(),
        // uniform marginal powers plus square-free cross products of distinct columns
        ViewKind::CopulaMoments => all
            .into_iter()
            .filter(|e| {
                let used = e.iter().filter(|x| **x > 0).count();
                used == 1 || e.iter().all(|x| *x <= 1)
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn enumerate_degree(
    current: &mut Vec<usize>,
    pos: usize,
    remaining: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        enumerate_degree(current, pos + 1, remaining - e, out);
    }
    current[pos] = 0;
}

/// Number of rows a moment-matching view of the given shape produces.
pub fn moment_row_count(kind: ViewKind, columns: usize, order: usize) -> usize {
    if columns == 0 || order == 0 {
        return 0;
    }
    moment_exponents(kind, columns, order).len()
}

fn monomial(cols: &[&[f64]], exponents: &[usize], j: usize) -> f64 {
    cols.iter()
        .zip(exponents)
        .map(|(c, e)| c[j].powi(*e as i32))
        .product()
}

/// Full-information views: match (cross-)moments of the working panel up to
/// `order` against the prior-weighted moments of a target sample.
///
/// For `CopulaMoments` both the working columns and the target sample are
/// mapped to copula ranks, and pure powers `U^m` are pinned to `1 / (m + 1)`.
pub fn compile_moment_matching(
    view: &View,
    working: &[&[f64]],
    target_sample: &[Vec<f64>],
    prior: &ProbabilityVector,
    options: &CompileOptions,
) -> Result<Vec<CompiledRow>> {
    expect_kind(
        view,
        &[
            ViewKind::MarginalMoments,
            ViewKind::CopulaMoments,
            ViewKind::JointMoments,
        ],
    )?;
    let order = view.order.unwrap_or(0);
    if order < 1 {
        return Err(Error::InvalidView(
            "moment matching needs order >= 1".into(),
        ));
    }
    if target_sample.len() != working.len() {
        return Err(Error::LengthMismatch {
            expected: working.len(),
            actual: target_sample.len(),
        });
    }
    for c in target_sample {
        prior.check_len(c.len())?;
    }
    let exponents = moment_exponents(view.kind, working.len(), order);
    if exponents.len() > options.moment_row_cap {
        return Err(Error::TooManyRows {
            rows: exponents.len(),
            cap: options.moment_row_cap,
        });
    }
    let copula = view.kind == ViewKind::CopulaMoments;
    let target_cols: Vec<Vec<f64>> = if copula {
        target_sample
            .iter()
            .map(|c| crate::scenario::stats_copula_column(c))
            .collect()
    } else {
        target_sample.to_vec()
    };
    let target_refs: Vec<&[f64]> = target_cols.iter().map(Vec::as_slice).collect();
    let w = prior.as_slice();
    let j = prior.len();
    let tag = match view.kind {
        ViewKind::MarginalMoments => "marginal",
        ViewKind::CopulaMoments => "copula",
        _ => "joint",
    };
    let mut rows = Vec::with_capacity(exponents.len());
    for e in exponents {
        let coefficients: Vec<f64> = (0..j).map(|s| monomial(working, &e, s)).collect();
        let single = e.iter().filter(|x| **x > 0).count() == 1;
        let rhs = if copula && single {
            1.0 / (e.iter().sum::<usize>() as f64 + 1.0)
        } else {
            (0..j).map(|s| w[s] * monomial(&target_refs, &e, s)).sum()
        };
        let label = format!("{tag}-moment[{}]{e:?}", view.columns.join(","));
        nonempty(&label, &coefficients)?;
        rows.push(CompiledRow::new(Direction::Equal, label, coefficients, rhs));
    }
    Ok(rows)
}

fn compile_view(
    view: &View,
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
    options: &CompileOptions,
) -> Result<Vec<CompiledRow>> {
    view.validate()?;
    match view.kind {
        ViewKind::MeanLocation => compile_mean_location(view, view_panel, prior),
        ViewKind::MedianLocation => compile_median_location(view, view_panel, prior),
        ViewKind::Ranking => compile_ranking(view, view_panel),
        ViewKind::VolatilityStd => compile_volatility_std(view, view_panel, prior),
        ViewKind::VolatilityQuantileRange => {
            compile_volatility_quantile_range(view, view_panel, prior, scalar_level(view)?)
        }
        ViewKind::CorrelationStress => compile_correlation_stress(view, view_panel, prior),
        ViewKind::QuantileTail => {
            compile_quantile_tail(view, view_panel, prior, scalar_level(view)?)
        }
        ViewKind::TailCodependence => {
            let sub = selected_panel(view, view_panel)?;
            let ranks = empirical_copula_ranks(&sub);
            let refs: Vec<&[f64]> = ranks.iter().map(Vec::as_slice).collect();
            let thresholds = match &view.level {
                Some(Level::Scalar(u)) => vec![*u; refs.len()],
                Some(Level::Vector(v)) => v.clone(),
                None => {
                    return Err(Error::InvalidView(
                        "tail codependence needs thresholds in `level`".into(),
                    ))
                }
            };
            compile_tail_codependence(view, &refs, prior, &thresholds)
        }
        ViewKind::MarginalMoments | ViewKind::CopulaMoments | ViewKind::JointMoments => {
            let sample = match &view.target_sample {
                Some(TargetSample::Inline(cols)) => cols,
                Some(TargetSample::Csv(path)) => {
                    return Err(Error::InvalidView(format!(
                        "target sample `{path}` was not loaded"
                    )))
                }
                None => {
                    return Err(Error::InvalidView(
                        "moment matching needs a target sample".into(),
                    ))
                }
            };
            let sub = selected_panel(view, view_panel)?;
            let working: Vec<Vec<f64>> = if view.kind == ViewKind::CopulaMoments {
                empirical_copula_ranks(&sub)
            } else {
                sub.columns().to_vec()
            };
            let refs: Vec<&[f64]> = working.iter().map(Vec::as_slice).collect();
            compile_moment_matching(view, &refs, sample, prior, options)
        }
    }
}

fn selected_panel(view: &View, view_panel: &ViewPanel) -> Result<ViewPanel> {
    let cols = view
        .columns
        .iter()
        .map(|c| column(view_panel, c).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    ViewPanel::new(view.columns.clone(), cols)
}

/// Compiles all views into one constraint set (normalization row included).
/// Targets are always resolved with the prior probabilities.
pub fn compile(
    views: &[View],
    view_panel: &ViewPanel,
    prior: &ProbabilityVector,
    options: &CompileOptions,
) -> Result<LinearConstraintSet> {
    prior.check_len(view_panel.num_scenarios())?;
    let mut set = LinearConstraintSet::new(prior.len());
    for view in views {
        for row in compile_view(view, view_panel, prior, options)? {
            push(&mut set, row)?;
        }
    }
    Ok(set)
}

/// Evaluates every column expression the views reference, then compiles.
pub fn compile_on_panel(
    views: &[View],
    panel: &ScenarioPanel,
    prior: &ProbabilityVector,
    options: &CompileOptions,
) -> Result<LinearConstraintSet> {
    if views.is_empty() {
        prior.check_len(panel.num_scenarios())?;
        return Ok(LinearConstraintSet::new(panel.num_scenarios()));
    }
    let mut exprs: Vec<&str> = Vec::new();
    for v in views {
        for c in &v.columns {
            if !exprs.contains(&c.as_str()) {
                exprs.push(c);
            }
        }
    }
    let view_panel = panel.view_panel(&exprs)?;
    compile(views, &view_panel, prior, options)
}
