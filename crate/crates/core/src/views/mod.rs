//! View statements and their compilation into linear constraints on the
//! posterior scenario probabilities.

mod compile;
mod constraints;
mod file;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compile::{
    compile, compile_correlation_stress, compile_mean_location, compile_median_location,
    compile_moment_matching, compile_on_panel, compile_quantile_tail, compile_ranking,
    compile_tail_codependence, compile_volatility_quantile_range, compile_volatility_std,
    moment_row_count, shrinkage_correlation, CompileOptions, CompiledRow,
};
pub use constraints::{ConstraintRow, LinearConstraintSet};
pub use file::{UserList, UserViews, ViewFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    MeanLocation,
    MedianLocation,
    Ranking,
    VolatilityStd,
    VolatilityQuantileRange,
    CorrelationStress,
    QuantileTail,
    TailCodependence,
    MarginalMoments,
    CopulaMoments,
    JointMoments,
}

impl ViewKind {
    pub fn is_moment_matching(self) -> bool {
        matches!(
            self,
            ViewKind::MarginalMoments | ViewKind::CopulaMoments | ViewKind::JointMoments
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "=")]
    Equal,
    #[serde(rename = ">=")]
    AtLeast,
}

/// How a view's reference value is resolved against the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", deny_unknown_fields)]
pub enum TargetSpec {
    /// The value itself.
    Absolute(f64),
    /// Prior mean plus `kappa` prior standard deviations. Conventional values
    /// are -2, -1, 1, 2 (very bearish .. very bullish); any finite kappa is accepted.
    KappaSigma(f64),
    /// Prior `(1/2 + kappa/5)`-tile, so kappa in {-2, -1, 1, 2} maps to
    /// the 0.1, 0.3, 0.7, 0.9 tiles. Requires `|kappa| < 2.5`.
    QuantileShift(f64),
    /// `kappa` times the prior reference quantity (standard deviation, quantile
    /// range or joint tail mass, depending on the view kind).
    ReferenceMultiple(f64),
}

/// Tail level for quantile views, half-width for quantile-range views, or joint
/// copula thresholds for tail-codependence views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// Full-information target sample: inline columns (one vector per view column,
/// each of length J) or a CSV path, resolved when a view file is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSample {
    Inline(Vec<Vec<f64>>),
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct View {
    pub kind: ViewKind,
    /// Column expressions, e.g. `"G6m - G2m"` or `"abs(M)"`.
    pub columns: Vec<String>,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    /// Correlation stress only: pin both means and second moments (default on).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_sample: Option<TargetSample>,
}

impl View {
    pub fn new(kind: ViewKind, columns: &[&str], direction: Direction) -> Self {
        Self {
            kind,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            direction,
            target: None,
            order: None,
            confidence: None,
            level: None,
            anchor: None,
            target_sample: None,
        }
    }

    pub fn with_target(mut self, target: TargetSpec) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = Some(Level::Scalar(level));
        self
    }

    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> Self {
        self.level = Some(Level::Vector(thresholds));
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = Some(order);
        self
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.confidence = Some(c);
        self
    }

    pub fn with_anchor(mut self, anchor: bool) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn with_target_sample(mut self, columns: Vec<Vec<f64>>) -> Self {
        self.target_sample = Some(TargetSample::Inline(columns));
        self
    }

    /// Mean view `E[col] <dir> m_hat + kappa * sigma_hat`.
    pub fn mean(column: &str, direction: Direction, target: TargetSpec) -> Self {
        Self::new(ViewKind::MeanLocation, &[column], direction).with_target(target)
    }

    /// Structural checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidView(msg));
        if self.columns.is_empty() {
            return invalid(format!("{:?} view without columns", self.kind));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidConfidence(c));
            }
        }
        match self.kind {
            ViewKind::Ranking => {
                if self.columns.len() < 2 {
                    return invalid("ranking needs at least 2 columns".into());
                }
                if self.target.is_some() {
                    return invalid("ranking takes no target".into());
                }
            }
            ViewKind::CorrelationStress => {
                if self.columns.len() != 2 {
                    return invalid("correlation stress needs exactly 2 columns".into());
                }
                match self.target {
                    Some(TargetSpec::Absolute(r)) if (-1.0..=1.0).contains(&r) => {}
                    _ => {
                        return invalid(
                            "correlation stress needs an absolute target in [-1, 1]".into(),
                        )
                    }
                }
            }
            ViewKind::MeanLocation
            | ViewKind::MedianLocation
            | ViewKind::VolatilityStd
            | ViewKind::VolatilityQuantileRange
            | ViewKind::QuantileTail => {
                if self.columns.len() != 1 {
                    return invalid(format!("{:?} takes exactly one column", self.kind));
                }
            }
            ViewKind::TailCodependence => {
                if self.columns.len() < 2 {
                    return invalid("tail codependence needs at least 2 columns".into());
                }
            }
            ViewKind::MarginalMoments | ViewKind::CopulaMoments | ViewKind::JointMoments => {
                if self.order.unwrap_or(0) < 1 {
                    return invalid("moment matching needs order >= 1".into());
                }
            }
        }
        if let Some(TargetSpec::QuantileShift(k)) = self.target {
            if !(k.abs() < 2.5) {
                return invalid(format!("quantile shift kappa {k} outside (-2.5, 2.5)"));
            }
        }
        Ok(())
    }
}
