//! Relative-entropy minimization under linear constraints.
//!
//! The posterior is recovered from the Lagrange dual, whose dimension is the
//! number of constraint rows rather than the number of scenarios. The dual is
//! maximized by a projected Newton method on the exact Hessian with Marquardt
//! damping and backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ProbabilityVector;
use crate::views::LinearConstraintSet;

/// Exponents are clamped to `[-EXPONENT_CLAMP, EXPONENT_CLAMP]` before `exp`.
pub const EXPONENT_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop when the projected dual gradient has sup-norm below this. Rows are
    /// scaled to unit max-abs coefficient before the test.
    pub dual_tolerance: f64,
    pub max_iterations: usize,
    /// Largest drift of the primal total from one that is fixed by renormalizing.
    pub feasibility_tolerance: f64,
    pub line_search: LineSearch,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dual_tolerance: 1e-9,
            max_iterations: 500,
            feasibility_tolerance: 1e-8,
            line_search: LineSearch::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let ok = self.dual_tolerance > 0.0
            && self.feasibility_tolerance > 0.0
            && self.max_iterations > 0
            && ls.armijo > 0.0
            && ls.armijo < 1.0
            && ls.shrink > 0.0
            && ls.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub relative_entropy: f64,
    pub max_constraint_violation: f64,
    pub complementary_slackness: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of exponent clamp events during the solve.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub posterior: ProbabilityVector,
    /// Inequality multipliers, one per `F` row.
    pub lambda: Vec<f64>,
    /// Equality multipliers, one per `H` row; the first belongs to normalization.
    pub nu: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl PosteriorResult {
    pub fn relative_entropy(&self) -> f64 {
        self.diagnostics.relative_entropy
    }
}

/// `sum p~_j (ln p~_j - ln p_j)` with `0 ln 0 = 0`.
pub fn relative_entropy(p_tilde: &ProbabilityVector, p: &ProbabilityVector) -> Result<f64> {
    p.check_len(p_tilde.len())?;
    let mut total = 0.0;
    for (j, (&q, &r)) in p_tilde.as_slice().iter().zip(p.as_slice()).enumerate() {
        if q == 0.0 {
            continue;
        }
        if r == 0.0 {
            return Err(Error::SupportViolation(j));
        }
        total += q * (q.ln() - r.ln());
    }
    Ok(total.max(0.0))
}

fn check_dims(
    lambda: &[f64],
    nu: &[f64],
    constraints: &LinearConstraintSet,
    prior: &ProbabilityVector,
) -> Result<()> {
    prior.check_len(constraints.num_scenarios())?;
    if lambda.len() != constraints.inequalities().len() {
        return Err(Error::LengthMismatch {
            expected: constraints.inequalities().len(),
            actual: lambda.len(),
        });
    }
    if nu.len() != constraints.equalities().len() {
        return Err(Error::LengthMismatch {
            expected: constraints.equalities().len(),
            actual: nu.len(),
        });
    }
    Ok(())
}

/// `x_j = exp(ln p_j - 1 - (F'lambda)_j - (H'nu)_j)`, zero where the prior is zero.
pub fn primal_from_duals(
    lambda: &[f64],
    nu: &[f64],
    constraints: &LinearConstraintSet,
    prior: &ProbabilityVector,
) -> Result<Vec<f64>> {
    check_dims(lambda, nu, constraints, prior)?;
    let dual = Dual::unscaled(constraints, prior);
    let y: Vec<f64> = lambda.iter().chain(nu).copied().collect();
    Ok(dual.primal(&y).0)
}

/// Dual value `G = -sum x - lambda'f - nu'h` and its gradient `(F x - f, H x - h)`.
pub fn dual_value_and_gradient(
    lambda: &[f64],
    nu: &[f64],
    constraints: &LinearConstraintSet,
    prior: &ProbabilityVector,
) -> Result<(f64, Vec<f64>)> {
    check_dims(lambda, nu, constraints, prior)?;
    let dual = Dual::unscaled(constraints, prior);
    let y: Vec<f64> = lambda.iter().chain(nu).copied().collect();
    let (x, _) = dual.primal(&y);
    let gradient = dual.residual(&x);
    Ok((-dual.objective(&y, &x), gradient))
}

/// The dual in minimization form, `phi(y) = sum x(y) + y'b`, over stacked rows `A = [F; H]`.
struct Dual {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    /// Factor each original row was multiplied by.
    scale: Vec<f64>,
    inequalities: usize,
    log_prior: Vec<f64>,
}

impl Dual {
    fn build(constraints: &LinearConstraintSet, prior: &ProbabilityVector, scaled: bool) -> Self {
        let all = constraints
            .inequalities()
            .iter()
            .chain(constraints.equalities());
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut scale = Vec::new();
        for row in all {
            let s = if scaled {
                let m = row.coefficients.iter().fold(0.0f64, |a, c| a.max(c.abs()));
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            } else {
                1.0
            };
            rows.push(row.coefficients.iter().map(|c| c * s).collect());
            rhs.push(row.rhs * s);
            scale.push(s);
        }
        let log_prior = prior
            .as_slice()
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            .collect();
        Self {
            rows,
            rhs,
            scale,
            inequalities: constraints.inequalities().len(),
            log_prior,
        }
    }

    fn unscaled(constraints: &LinearConstraintSet, prior: &ProbabilityVector) -> Self {
        Self::build(constraints, prior, false)
    }

    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn primal(&self, y: &[f64]) -> (Vec<f64>, usize) {
        let mut z = vec![0.0; self.log_prior.len()];
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi != 0.0 {
                z.iter_mut().zip(row).for_each(|(zj, a)| *zj += yi * a);
            }
        }
        let mut clamped = 0;
        let x = self
            .log_prior
            .iter()
            .zip(&z)
            .map(|(&lp, &zj)| {
                if lp == f64::NEG_INFINITY {
                    return 0.0;
                }
                let e = lp - 1.0 - zj;
                if e.abs() > EXPONENT_CLAMP {
                    clamped += 1;
                }
                e.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp()
            })
            .collect();
        (x, clamped)
    }

    /// `A x - b`, the gradient of the concave dual.
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| row.iter().zip(x).map(|(a, xj)| a * xj).sum::<f64>() - b)
            .collect()
    }

    fn objective(&self, y: &[f64], x: &[f64]) -> f64 {
        x.iter().sum::<f64>() + y.iter().zip(&self.rhs).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Bound on the summation error in [`Self::objective`].
    fn rounding_error(&self, y: &[f64], x: &[f64]) -> f64 {
        let magnitude = x.iter().sum::<f64>()
            + y.iter()
                .zip(&self.rhs)
                .map(|(a, b)| (a * b).abs())
                .sum::<f64>();
        (x.len() + y.len()) as f64 * f64::EPSILON * magnitude.max(1.0)
    }

    fn project(&self, y: &mut [f64]) {
        y[..self.inequalities]
            .iter_mut()
            .for_each(|l| *l = l.max(0.0));
    }

    /// Sup-norm of `y - P(y - grad phi)`.
    fn projected_gradient_norm(&self, y: &[f64], grad: &[f64]) -> f64 {
        y.iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (&yi, &g))| {
                if i < self.inequalities {
                    (yi - (yi - g).max(0.0)).abs()
                } else {
                    g.abs()
                }
            })
            .fold(0.0, f64::max)
    }

    fn hessian(&self, x: &[f64], free: &[usize]) -> DMatrix<f64> {
        let n = free.len();
        let mut h = DMatrix::zeros(n, n);
        let weighted: Vec<Vec<f64>> = free
            .iter()
            .map(|&a| self.rows[a].iter().zip(x).map(|(c, xj)| c * xj).collect())
            .collect();
        for (ia, wa) in weighted.iter().enumerate() {
            for (ib, &b) in free.iter().enumerate().take(ia + 1) {
                let v: f64 = wa.iter().zip(&self.rows[b]).map(|(w, c)| w * c).sum();
                h[(ia, ib)] = v;
                h[(ib, ia)] = v;
            }
        }
        h
    }
}

/// Damped Newton direction on the free coordinates; falls back to scaled steepest descent.
fn newton_direction(hessian: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let n = grad.len();
    let max_diag = (0..n)
        .map(|i| hessian[(i, i)])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let diag: Vec<f64> = (0..n)
        .map(|i| hessian[(i, i)].max(1e-12 * max_diag))
        .collect();
    let mut mu = 1e-10;
    while mu <= 1e10 {
        let mut damped = hessian.clone();
        for (i, d) in diag.iter().enumerate() {
            damped[(i, i)] += mu * d;
        }
        if let Some(chol) = damped.cholesky() {
            let step = chol.solve(&(-grad));
            if step.iter().all(|v| v.is_finite()) {
                return step;
            }
        }
        mu *= 100.0;
    }
    DVector::from_iterator(n, grad.iter().zip(&diag).map(|(g, d)| -g / d))
}

/// Minimizes relative entropy to `prior` subject to `constraints`.
pub fn solve(
    constraints: &LinearConstraintSet,
    prior: &ProbabilityVector,
    config: &SolverConfig,
) -> Result<PosteriorResult> {
    config.validate()?;
    prior.check_len(constraints.num_scenarios())?;
    let m_ineq = constraints.inequalities().len();

    if constraints.is_unconstrained() {
        return Ok(PosteriorResult {
            posterior: prior.clone(),
            lambda: Vec::new(),
            nu: vec![-1.0],
            diagnostics: Diagnostics {
                relative_entropy: 0.0,
                max_constraint_violation: constraints.max_violation(prior.as_slice()),
                complementary_slackness: 0.0,
                iterations: 0,
                converged: true,
                clamped: 0,
            },
        });
    }

    let dual = Dual::build(constraints, prior, true);
    let m = dual.dim();
    // Any feasible q has KL(q, p) <= -ln min p, so a dual value above it proves infeasibility.
    let min_prior = prior
        .as_slice()
        .iter()
        .copied()
        .filter(|p| *p > 0.0)
        .fold(f64::INFINITY, f64::min);
    let entropy_bound = -min_prior.ln();

    let mut y = vec![0.0; m];
    let (mut x, mut clamped) = dual.primal(&y);
    let mut phi = dual.objective(&y, &x);
    let mut iterations = 0;
    let ls = config.line_search;

    loop {
        // gradient of phi is b - A x
        let grad: Vec<f64> = dual.residual(&x).into_iter().map(|r| -r).collect();
        let pg = dual.projected_gradient_norm(&y, &grad);
        if -phi > entropy_bound + 1e-6 {
            return Err(Error::Infeasible(format!(
                "dual value {:.6e} exceeds the entropy bound {:.6e}",
                -phi, entropy_bound
            )));
        }
        if pg <= config.dual_tolerance {
            break;
        }
        if iterations >= config.max_iterations {
            return Err(Error::NotConverged {
                iterations,
                gradient_norm: pg,
            });
        }
        iterations += 1;

        let eps = pg.min(1e-6);
        let free: Vec<usize> = (0..m)
            .filter(|&i| !(i < m_ineq && y[i] <= eps && grad[i] > 0.0))
            .collect();
        let hessian = dual.hessian(&x, &free);
        let g_free = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let step = newton_direction(&hessian, &g_free);
        let mut direction = vec![0.0; m];
        for (k, &i) in free.iter().enumerate() {
            direction[i] = step[k];
        }

        let rounding = dual.rounding_error(&y, &x);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let mut trial: Vec<f64> = y
                .iter()
                .zip(&direction)
                .map(|(a, d)| a + alpha * d)
                .collect();
            dual.project(&mut trial);
            let (tx, tc) = dual.primal(&trial);
            let tphi = dual.objective(&trial, &tx);
            let predicted: f64 = grad
                .iter()
                .zip(trial.iter().zip(&y))
                .map(|(g, (t, o))| g * (t - o))
                .sum();
            let armijo = tphi <= phi + ls.armijo * predicted;
            // Near the optimum the decrease in phi drops below the rounding error of
            // its sums; accept steps that keep phi flat to that error and shrink the
            // projected gradient.
            let flat = tphi <= phi + rounding && {
                let tgrad: Vec<f64> = dual.residual(&tx).into_iter().map(|r| -r).collect();
                dual.projected_gradient_norm(&trial, &tgrad) < pg
            };
            if tphi.is_finite() && (armijo || flat) {
                accepted = Some((trial, tx, tc, tphi));
                break;
            }
            alpha *= ls.shrink;
        }
        match accepted {
            Some((ny, nx, nc, nphi)) => {
                y = ny;
                x = nx;
                clamped += nc;
                phi = nphi;
            }
            None => {
                return Err(Error::NotConverged {
                    iterations,
                    gradient_norm: pg,
                })
            }
        }
    }

    let total: f64 = x.iter().sum();
    if (total - 1.0).abs() > config.feasibility_tolerance {
        return Err(Error::NotConverged {
            iterations,
            gradient_norm: (total - 1.0).abs(),
        });
    }
    let posterior = ProbabilityVector::renormalized(x, config.feasibility_tolerance)?;
    let multipliers: Vec<f64> = y.iter().zip(&dual.scale).map(|(v, s)| v * s).collect();
    let (lambda, nu) = multipliers.split_at(m_ineq);
    let (ineq_residuals, _) = constraints.residuals(&posterior);
    let complementary_slackness = lambda
        .iter()
        .zip(&ineq_residuals)
        .map(|(l, r)| (l * r).abs())
        .fold(0.0, f64::max);
    let diagnostics = Diagnostics {
        relative_entropy: relative_entropy(&posterior, prior)?,
        max_constraint_violation: constraints.max_violation(posterior.as_slice()),
        complementary_slackness,
        iterations,
        converged: true,
        clamped,
    };
    Ok(PosteriorResult {
        posterior,
        lambda: lambda.to_vec(),
        nu: nu.to_vec(),
        diagnostics,
    })
}
