//! End-to-end processing of several users' views: compile, solve, blend.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pooling::{
    pool_multi, posterior_from_power_set, power_set_allocation, ConfidenceSpec, UserConfidence,
};
use crate::scenario::{ProbabilityVector, ScenarioPanel};
use crate::solver::{solve, Diagnostics, SolverConfig};
use crate::views::{compile_on_panel, CompileOptions, UserViews, View};

#[derive(Debug, Clone, Default)]
pub struct WorkflowOptions {
    pub compile: CompileOptions,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsetDiagnostics {
    pub views: Vec<String>,
    pub probability: f64,
    pub diagnostics: Diagnostics,
}

/// One user's full-confidence posterior. With per-view confidences it is the
/// power-set blend of the subset posteriors.
#[derive(Debug, Clone, Serialize)]
pub struct UserPosterior {
    pub user_id: String,
    pub overall_confidence: f64,
    #[serde(skip)]
    pub posterior: ProbabilityVector,
    pub subsets: Vec<SubsetDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PooledPosterior {
    pub users: Vec<UserPosterior>,
    #[serde(skip)]
    pub pooled: ProbabilityVector,
}

fn view_id(k: usize) -> String {
    format!("v{}", k + 1)
}

fn tag_user(user: &str, err: Error) -> Error {
    match err {
        Error::Infeasible(msg) => Error::Infeasible(format!("user {user}: {msg}")),
        other => other,
    }
}

/// Solves `views` jointly at full confidence.
pub fn solve_views(
    panel: &ScenarioPanel,
    prior: &ProbabilityVector,
    views: &[View],
    options: &WorkflowOptions,
) -> Result<(ProbabilityVector, Diagnostics)> {
    let constraints = compile_on_panel(views, panel, prior, &options.compile)?;
    let result = solve(&constraints, prior, &options.solver)?;
    Ok((result.posterior, result.diagnostics))
}

pub fn solve_user(
    panel: &ScenarioPanel,
    prior: &ProbabilityVector,
    user: &UserViews,
    options: &WorkflowOptions,
) -> Result<UserPosterior> {
    for v in &user.views {
        v.validate()?;
    }
    let confidences: Vec<(String, f64)> = user
        .views
        .iter()
        .enumerate()
        .map(|(k, v)| (view_id(k), v.confidence.unwrap_or(1.0)))
        .collect();
    let allocation = power_set_allocation(&confidences)?;
    let mut subset_posteriors = BTreeMap::new();
    let mut subsets = Vec::new();
    for (set, probability) in &allocation.subsets {
        if *probability <= 0.0 || set.is_empty() {
            continue;
        }
        let chosen: Vec<View> = user
            .views
            .iter()
            .enumerate()
            .filter(|(k, _)| set.contains(&view_id(*k)))
            .map(|(_, v)| v.clone())
            .collect();
        let (posterior, diagnostics) =
            solve_views(panel, prior, &chosen, options).map_err(|e| tag_user(&user.user_id, e))?;
        subsets.push(SubsetDiagnostics {
            views: set.iter().cloned().collect(),
            probability: *probability,
            diagnostics,
        });
        subset_posteriors.insert(set.clone(), posterior);
    }
    let posterior = posterior_from_power_set(&allocation, &subset_posteriors, prior)?;
    Ok(UserPosterior {
        user_id: user.user_id.clone(),
        overall_confidence: user.overall_confidence,
        posterior,
        subsets,
    })
}

/// Solves every user (in parallel) and blends with the overall confidences; the
/// residual confidence stays on the prior.
pub fn solve_and_pool(
    panel: &ScenarioPanel,
    prior: &ProbabilityVector,
    users: &[UserViews],
    options: &WorkflowOptions,
) -> Result<PooledPosterior> {
    prior.check_len(panel.num_scenarios())?;
    let spec = ConfidenceSpec {
        users: users
            .iter()
            .map(|u| UserConfidence {
                user_id: u.user_id.clone(),
                overall_confidence: u.overall_confidence,
                views: Vec::new(),
            })
            .collect(),
    };
    spec.validate()?;
    let solved: Vec<Result<UserPosterior>> = std::thread::scope(|scope| {
        let handles: Vec<_> = users
            .iter()
            .map(|u| scope.spawn(move || solve_user(panel, prior, u, options)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    let users = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let posteriors: BTreeMap<String, ProbabilityVector> = users
        .iter()
        .map(|u| (u.user_id.clone(), u.posterior.clone()))
        .collect();
    let pooled = pool_multi(&posteriors, &spec, prior)?;
    Ok(PooledPosterior { users, pooled })
}

/// The non-empty view subsets that a user's confidences give positive mass.
pub fn active_subsets(user: &UserViews) -> Result<Vec<BTreeSet<String>>> {
    let confidences: Vec<(String, f64)> = user
        .views
        .iter()
        .enumerate()
        .map(|(k, v)| (view_id(k), v.confidence.unwrap_or(1.0)))
        .collect();
    Ok(power_set_allocation(&confidences)?
        .subsets
        .into_iter()
        .filter(|(s, p)| *p > 0.0 && !s.is_empty())
        .map(|(s, _)| s)
        .collect())
}
