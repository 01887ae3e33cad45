//! Confidence blending of prior and posterior probability vectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ProbabilityVector, SUM_TOLERANCE};

/// Largest number of views for which [`PowerSetAllocation::full_table`] enumerates subsets.
pub const MAX_TABLE_VIEWS: usize = 16;

fn check_confidence(c: f64) -> Result<()> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::InvalidConfidence(c))
    }
}

fn blend(terms: &[(f64, &ProbabilityVector)]) -> Result<ProbabilityVector> {
    let len = terms
        .first()
        .map(|t| t.1.len())
        .ok_or_else(|| Error::InvalidProbabilities("nothing to blend".into()))?;
    let mut out = vec![0.0; len];
    for (w, p) in terms {
        p.check_len(len)?;
        if *w > 0.0 {
            out.iter_mut()
                .zip(p.as_slice())
                .for_each(|(o, v)| *o += w * v);
        }
    }
    ProbabilityVector::renormalized(out, SUM_TOLERANCE * 10.0)
}

/// `(1 - c) prior + c posterior`.
pub fn pool_two(
    prior: &ProbabilityVector,
    posterior: &ProbabilityVector,
    c: f64,
) -> Result<ProbabilityVector> {
    check_confidence(c)?;
    prior.check_len(posterior.len())?;
    if c == 0.0 {
        return Ok(prior.clone());
    }
    if c == 1.0 {
        return Ok(posterior.clone());
    }
    blend(&[(1.0 - c, prior), (c, posterior)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfidence {
    pub user_id: String,
    pub overall_confidence: f64,
    /// Per-view confidences keyed by view id.
    #[serde(default)]
    pub views: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceSpec {
    pub users: Vec<UserConfidence>,
}

impl ConfidenceSpec {
    pub fn from_overall(pairs: &[(&str, f64)]) -> Result<Self> {
        let spec = Self {
            users: pairs
                .iter()
                .map(|(u, c)| UserConfidence {
                    user_id: u.to_string(),
                    overall_confidence: *c,
                    views: Vec::new(),
                })
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for user in &self.users {
            check_confidence(user.overall_confidence)?;
            for (_, c) in &user.views {
                check_confidence(*c)?;
            }
        }
        let total = self.total();
        if total > 1.0 + SUM_TOLERANCE {
            return Err(Error::InvalidConfidence(total));
        }
        let ids: BTreeSet<&str> = self.users.iter().map(|u| u.user_id.as_str()).collect();
        if ids.len() != self.users.len() {
            return Err(Error::InvalidView("duplicate user id".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.users.iter().map(|u| u.overall_confidence).sum()
    }

    /// Mass left for the reference model.
    pub fn residual(&self) -> f64 {
        (1.0 - self.total()).max(0.0)
    }
}

/// `c_0 prior + sum_s c_s posterior_s` with `c_0 = 1 - sum_s c_s`.
pub fn pool_multi(
    posteriors: &BTreeMap<String, ProbabilityVector>,
    spec: &ConfidenceSpec,
    prior: &ProbabilityVector,
) -> Result<ProbabilityVector> {
    spec.validate()?;
    let mut terms = vec![(spec.residual(), prior)];
    for user in &spec.users {
        if user.overall_confidence == 0.0 {
            continue;
        }
        let p = posteriors
            .get(&user.user_id)
            .ok_or(Error::MissingPosterior(user.user_id.clone()))?;
        terms.push((user.overall_confidence, p));
    }
    if terms.len() == 2 && terms[0].0 == 0.0 {
        prior.check_len(terms[1].1.len())?;
        return Ok(terms[1].1.clone());
    }
    if terms.len() == 1 {
        return Ok(prior.clone());
    }
    blend(&terms)
}

/// Probability mass over subsets of views. Subsets not listed carry zero mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSetAllocation {
    pub views: Vec<String>,
    pub subsets: Vec<(BTreeSet<String>, f64)>,
}

impl PowerSetAllocation {
    pub fn probability_of(&self, subset: &BTreeSet<String>) -> f64 {
        self.subsets
            .iter()
            .filter(|(s, _)| s == subset)
            .map(|(_, p)| p)
            .sum::<f64>()
            + 0.0
    }

    /// Every subset of the views with its mass, zeros included.
    pub fn full_table(&self) -> Result<Vec<(BTreeSet<String>, f64)>> {
        let k = self.views.len();
        if k > MAX_TABLE_VIEWS {
            return Err(Error::TooManyRows {
                rows: 1 << k.min(62),
                cap: 1 << MAX_TABLE_VIEWS,
            });
        }
        Ok((0..(1usize << k))
            .map(|mask| {
                let set: BTreeSet<String> = (0..k)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| self.views[i].clone())
                    .collect();
                let p = self.probability_of(&set);
                (set, p)
            })
            .collect())
    }

    /// `sum_{A containing view} c_A`.
    pub fn marginal(&self, view: &str) -> f64 {
        self.subsets
            .iter()
            .filter(|(s, _)| s.contains(view))
            .map(|(_, p)| p)
            .sum()
    }
}

/// `a - b` on a 1e-15 grid, so gaps between decimal confidences come out as
/// the decimals themselves (0.3 - 0.1 gives 0.2, not 0.19999999999999998).
fn decimal_gap(a: f64, b: f64) -> f64 {
    ((a - b) * 1e15).round() / 1e15
}

/// Comonotone allocation: the views at or above each distinct confidence level
/// form nested subsets, each receiving the gap to the next level down.
pub fn power_set_allocation(view_confidences: &[(String, f64)]) -> Result<PowerSetAllocation> {
    for (_, c) in view_confidences {
        check_confidence(*c)?;
    }
    let mut levels: Vec<f64> = view_confidences
        .iter()
        .map(|v| v.1)
        .filter(|c| *c > 0.0)
        .collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut subsets = Vec::with_capacity(levels.len() + 1);
    for (k, &level) in levels.iter().enumerate() {
        let next = levels.get(k + 1).copied().unwrap_or(0.0);
        let set = view_confidences
            .iter()
            .filter(|v| v.1 >= level)
            .map(|v| v.0.clone())
            .collect();
        subsets.push((set, decimal_gap(level, next)));
    }
    let top = levels.first().copied().unwrap_or(0.0);
    subsets.push((BTreeSet::new(), decimal_gap(1.0, top)));
    Ok(PowerSetAllocation {
        views: view_confidences.iter().map(|v| v.0.clone()).collect(),
        subsets,
    })
}

/// `sum_A c_A posterior_A`, with the empty subset mapped to the prior.
pub fn posterior_from_power_set(
    allocation: &PowerSetAllocation,
    subset_posteriors: &BTreeMap<BTreeSet<String>, ProbabilityVector>,
    prior: &ProbabilityVector,
) -> Result<ProbabilityVector> {
    let mut terms = Vec::new();
    for (set, p) in &allocation.subsets {
        if *p <= 0.0 {
            continue;
        }
        let posterior = if set.is_empty() {
            prior
        } else {
            subset_posteriors
                .get(set)
                .ok_or_else(|| Error::MissingPosterior(format!("{set:?}")))?
        };
        terms.push((*p, posterior));
    }
    if let [(_, only)] = terms.as_slice() {
        prior.check_len(only.len())?;
        return Ok((*only).clone());
    }
    blend(&terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub num_past_views: u64,
    pub view_outcome_correlation: f64,
}

/// Ad hoc skill score `max(0, rho) (1 - 1 / (1 + n))`, increasing in both arguments.
pub fn skill_confidence(track: TrackRecord) -> Result<f64> {
    let rho = track.view_outcome_correlation;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidConfidence(rho));
    }
    let n = track.num_past_views as f64;
    Ok(rho.max(0.0) * (1.0 - 1.0 / (1.0 + n)))
}
