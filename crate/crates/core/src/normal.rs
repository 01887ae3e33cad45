//! Closed-form entropy pooling for normal reference models.
//!
//! With a normal reference and views on linear combinations of means and
//! covariances the posterior stays normal, which makes this module the
//! yardstick for the numerical solver.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{weighted_covariance, weighted_mean, ProbabilityVector, ScenarioPanel};
use crate::solver::{solve, Diagnostics, SolverConfig};
use crate::views::{ConstraintRow, LinearConstraintSet};

/// Smallest panel produced by [`discretize`].
pub const MIN_DISCRETIZATION: usize = 100;

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse(format!(
            "{what} must be a non-empty rectangular matrix"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Multivariate normal `N(mu, sigma)` with a symmetric positive definite `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormalModelJson", into = "NormalModelJson")]
pub struct NormalModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalModelJson {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl TryFrom<NormalModelJson> for NormalModel {
    type Error = Error;
    fn try_from(value: NormalModelJson) -> Result<Self> {
        Self::from_rows(value.mu, &value.sigma)
    }
}

impl From<NormalModel> for NormalModelJson {
    fn from(m: NormalModel) -> Self {
        Self {
            mu: m.mu.iter().copied().collect(),
            sigma: from_matrix(&m.sigma),
        }
    }
}

impl NormalModel {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::Parse("empty mean vector".into()));
        }
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: sigma.nrows(),
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite normal parameters".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::Parse(format!(
                "covariance is not symmetric (gap {asym:e})"
            )));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(smallest_eigenvalue(&sigma)));
        }
        Ok(Self { mu, sigma })
    }

    pub fn from_rows(mu: Vec<f64>, sigma: &[Vec<f64>]) -> Result<Self> {
        Self::new(DVector::from_vec(mu), to_matrix(sigma, "sigma")?)
    }

    pub fn standard(n: usize) -> Self {
        Self {
            mu: DVector::zeros(n),
            sigma: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    fn cholesky(&self) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
        self.sigma
            .clone()
            .cholesky()
            .expect("validated positive definite")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self
            .cholesky()
            .l()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mu;
        let z = self
            .cholesky()
            .l()
            .solve_lower_triangular(&d)
            .expect("triangular solve");
        let n = self.dim() as f64;
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + self.log_det() + z.norm_squared())
    }
}

/// Views on linear combinations: `Q mu~ = mu_q` and `G Sigma~ G' = sigma_g`. Either block may be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalViewSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_g: Option<Vec<Vec<f64>>>,
}

impl NormalViewSpec {
    pub fn mean(q: Vec<Vec<f64>>, mu_q: Vec<f64>) -> Self {
        Self {
            q: Some(q),
            mu_q: Some(mu_q),
            ..Self::default()
        }
    }

    pub fn with_covariance(mut self, g: Vec<Vec<f64>>, sigma_g: Vec<Vec<f64>>) -> Self {
        self.g = Some(g);
        self.sigma_g = Some(sigma_g);
        self
    }

    fn mean_block(&self, n: usize) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        match (&self.q, &self.mu_q) {
            (None, None) => Ok(None),
            (Some(q), Some(target)) => {
                let q = to_matrix(q, "Q")?;
                if q.ncols() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: q.ncols(),
                    });
                }
                if target.len() != q.nrows() {
                    return Err(Error::LengthMismatch {
                        expected: q.nrows(),
                        actual: target.len(),
                    });
                }
                Ok(Some((q, DVector::from_column_slice(target))))
            }
            _ => Err(Error::InvalidView(
                "Q and mu_q must be given together".into(),
            )),
        }
    }

    fn covariance_block(&self, n: usize) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>> {
        match (&self.g, &self.sigma_g) {
            (None, None) => Ok(None),
            (Some(g), Some(target)) => {
                let g = to_matrix(g, "G")?;
                let target = to_matrix(target, "sigma_G")?;
                if g.ncols() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: g.ncols(),
                    });
                }
                if target.nrows() != g.nrows() || target.ncols() != g.nrows() {
                    return Err(Error::LengthMismatch {
                        expected: g.nrows(),
                        actual: target.nrows(),
                    });
                }
                let asym = (&target - target.transpose()).amax();
                if asym > 1e-12 * target.amax().max(1.0) {
                    return Err(Error::InvalidView("sigma_G is not symmetric".into()));
                }
                let low = smallest_eigenvalue(&target);
                if low < -1e-12 * target.amax().max(1.0) {
                    return Err(Error::InvalidView(format!(
                        "sigma_G has negative eigenvalue {low:e}"
                    )));
                }
                Ok(Some((g, target)))
            }
            _ => Err(Error::InvalidView(
                "G and sigma_G must be given together".into(),
            )),
        }
    }
}

/// Cholesky factor, treating pivots below `1e-12` of the largest diagonal entry as singular.
fn factor(m: DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax();
    let chol = m.cholesky().ok_or_else(|| Error::Singular(what.into()))?;
    let pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d * d)
        .fold(f64::INFINITY, f64::min);
    if !(pivot > 1e-12 * scale) {
        return Err(Error::Singular(what.into()));
    }
    Ok(chol)
}

/// Full-confidence posterior of a normal reference under normal views.
pub fn normal_posterior(reference: &NormalModel, views: &NormalViewSpec) -> Result<NormalModel> {
    let n = reference.dim();
    let (mu, sigma) = (&reference.mu, &reference.sigma);
    let mut mu_post = mu.clone();
    let mut sigma_post = sigma.clone();

    if let Some((q, target)) = views.mean_block(n)? {
        let sq = sigma * q.transpose();
        let chol = factor(&q * &sq, "Q Sigma Q'")?;
        mu_post += sq * chol.solve(&(target - &q * mu));
    }
    if let Some((g, target)) = views.covariance_block(n)? {
        let gs = &g * sigma;
        let chol = factor(&gs * g.transpose(), "G Sigma G'")?;
        // (GSG')^-1 S_G (GSG')^-1 - (GSG')^-1
        let left = chol.solve(&target);
        let middle = chol.solve(&left.transpose()).transpose() - chol.inverse();
        sigma_post += gs.transpose() * symmetrize(&middle) * &gs;
    }
    let sigma_post = symmetrize(&sigma_post);
    if sigma_post.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(smallest_eigenvalue(&sigma_post)));
    }
    Ok(NormalModel {
        mu: mu_post,
        sigma: sigma_post,
    })
}

/// Relative entropy of `a` with respect to `b`.
pub fn kl_normals(a: &NormalModel, b: &NormalModel) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch {
            expected: b.dim(),
            actual: a.dim(),
        });
    }
    let chol = factor(b.sigma.clone(), "reference covariance")?;
    let delta = &a.mu - &b.mu;
    let trace = chol.solve(&(&a.sigma - &b.sigma)).trace();
    let quad = delta.dot(&chol.solve(&delta));
    Ok((0.5 * (b.log_det() - a.log_det() + trace + quad)).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalMixture {
    pub components: Vec<(f64, NormalModel)>,
}

impl NormalMixture {
    pub fn new(components: Vec<(f64, NormalModel)>) -> Result<Self> {
        let n = components
            .first()
            .map(|c| c.1.dim())
            .ok_or(Error::InvalidConfidence(f64::NAN))?;
        if let Some(bad) = components.iter().find(|c| !(c.0 >= 0.0 && c.0 <= 1.0)) {
            return Err(Error::InvalidConfidence(bad.0));
        }
        if components.iter().any(|c| c.1.dim() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: 0,
            });
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfidence(total));
        }
        Ok(Self { components })
    }

    /// Components carrying positive weight.
    pub fn effective_components(&self) -> Vec<&(f64, NormalModel)> {
        self.components.iter().filter(|c| c.0 > 0.0).collect()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.components[0].1.dim()), |acc, (w, m)| {
                acc + &m.mu * *w
            })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let n = mean.len();
        self.components
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, (w, m)| {
                let d = &m.mu - &mean;
                acc + (&m.sigma + &d * d.transpose()) * *w
            })
    }

    /// Marginal density of coordinate `k` at `x`.
    pub fn marginal_density(&self, k: usize, x: f64) -> f64 {
        self.components
            .iter()
            .map(|(w, m)| {
                let s2 = m.sigma[(k, k)];
                let d = x - m.mu[k];
                w * (-0.5 * d * d / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
            })
            .sum()
    }
}

/// `(1 - c) reference + c full_confidence`.
pub fn mixture_posterior(
    reference: &NormalModel,
    full_confidence: &NormalModel,
    c: f64,
) -> Result<NormalMixture> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidConfidence(c));
    }
    NormalMixture::new(vec![
        (1.0 - c, reference.clone()),
        (c, full_confidence.clone()),
    ])
}

/// `J` pseudo-random draws from `model` with uniform probabilities. Factors are named `X1..XN`.
pub fn discretize(
    model: &NormalModel,
    j: usize,
    seed: u64,
) -> Result<(ScenarioPanel, ProbabilityVector)> {
    if j < MIN_DISCRETIZATION {
        return Err(Error::InvalidPanel(format!(
            "need at least {MIN_DISCRETIZATION} scenarios, got {j}"
        )));
    }
    let n = model.dim();
    let l = model.cholesky().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(j * n);
    for _ in 0..j {
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let x = &model.mu + &l * z;
        data.extend(x.iter());
    }
    let names = (1..=n).map(|k| format!("X{k}")).collect();
    Ok((
        ScenarioPanel::new(names, data)?,
        ProbabilityVector::uniform(j),
    ))
}

/// True when `g` lies in the row space of `q`.
fn in_row_space(q: &DMatrix<f64>, g: &DVector<f64>) -> bool {
    let svd = q.transpose().svd(true, true);
    match svd.solve(g, 1e-12) {
        Ok(c) => (q.transpose() * c - g).amax() <= 1e-10 * g.amax().max(1.0),
        Err(_) => false,
    }
}

/// Linear constraints on scenario probabilities expressing `views` on `panel`.
///
/// Mean views become `sum_j p_j q'x_j = mu_q`. Covariance views are centred on
/// the closed-form posterior mean `centre`: `G centre` is pinned (unless the
/// mean views already fix it) and `sum_j p_j (g_a'x_j - g_a'centre)(g_b'x_j - g_b'centre)`
/// equals `sigma_G[a, b]` for `a <= b`.
pub fn scenario_constraints(
    panel: &ScenarioPanel,
    views: &NormalViewSpec,
    centre: &DVector<f64>,
) -> Result<LinearConstraintSet> {
    let n = panel.num_factors();
    if centre.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: centre.len(),
        });
    }
    let project = |w: DVector<f64>| -> Vec<f64> {
        panel
            .rows()
            .map(|x| x.iter().zip(w.iter()).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut set = LinearConstraintSet::new(panel.num_scenarios());
    let mean = views.mean_block(n)?;
    if let Some((q, target)) = &mean {
        for i in 0..q.nrows() {
            set.push_eq(ConstraintRow::new(
                format!("mean {i}"),
                project(q.row(i).transpose()),
                target[i],
            ))?;
        }
    }
    if let Some((g, target)) = views.covariance_block(n)? {
        let mut columns = Vec::with_capacity(g.nrows());
        for a in 0..g.nrows() {
            let ga = g.row(a).transpose();
            let level = ga.dot(centre);
            let col = project(ga.clone());
            if !mean.as_ref().is_some_and(|(q, _)| in_row_space(q, &ga)) {
                set.push_eq(ConstraintRow::new(
                    format!("centre {a}"),
                    col.clone(),
                    level,
                ))?;
            }
            columns.push(col.into_iter().map(|v| v - level).collect::<Vec<_>>());
        }
        for a in 0..g.nrows() {
            for b in a..g.nrows() {
                let coefficients = columns[a]
                    .iter()
                    .zip(&columns[b])
                    .map(|(u, v)| u * v)
                    .collect();
                set.push_eq(ConstraintRow::new(
                    format!("covariance {a},{b}"),
                    coefficients,
                    target[(a, b)],
                ))?;
            }
        }
    }
    Ok(set)
}

/// Closed-form posterior next to the moments of the entropy-pooling posterior
/// on a `J`-scenario discretization of the reference.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub analytical: NormalModel,
    pub numerical_mu: Vec<f64>,
    pub numerical_sigma: Vec<Vec<f64>>,
    /// Largest absolute gap between the means.
    pub mean_gap: f64,
    /// Largest relative gap between the standard deviations.
    pub std_gap: f64,
    pub diagnostics: Diagnostics,
}

pub fn compare_numerical(
    reference: &NormalModel,
    views: &NormalViewSpec,
    j: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<Comparison> {
    let analytical = normal_posterior(reference, views)?;
    let (panel, prior) = discretize(reference, j, seed)?;
    let constraints = scenario_constraints(&panel, views, &analytical.mu)?;
    let result = solve(&constraints, &prior, config)?;
    let n = reference.dim();
    let cols: Vec<Vec<f64>> = (0..n).map(|k| panel.column(k)).collect();
    let p = &result.posterior;
    let numerical_mu = cols
        .iter()
        .map(|c| weighted_mean(c, p))
        .collect::<Result<Vec<_>>>()?;
    let mut numerical_sigma = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            numerical_sigma[a][b] = weighted_covariance(&cols[a], &cols[b], p)?;
        }
    }
    let mean_gap = (0..n)
        .map(|k| (numerical_mu[k] - analytical.mu[k]).abs())
        .fold(0.0, f64::max);
    let std_gap = (0..n)
        .map(|k| {
            let exact = analytical.sigma[(k, k)].sqrt();
            (numerical_sigma[k][k].sqrt() - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    Ok(Comparison {
        analytical,
        numerical_mu,
        numerical_sigma,
        mean_gap,
        std_gap,
        diagnostics: result.diagnostics,
    })
}
