use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::ProbabilityVector;

/// One linear row over the scenario probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintRow {
    pub label: String,
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

impl ConstraintRow {
    pub fn new(label: impl Into<String>, coefficients: Vec<f64>, rhs: f64) -> Self {
        Self {
            label: label.into(),
            coefficients,
            rhs,
        }
    }

    pub fn dot(&self, p: &[f64]) -> f64 {
        self.coefficients.iter().zip(p).map(|(a, b)| a * b).sum()
    }

    pub fn negated(&self) -> Self {
        Self {
            label: self.label.clone(),
            coefficients: self.coefficients.iter().map(|c| -c).collect(),
            rhs: -self.rhs,
        }
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.coefficients.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: self.coefficients.len(),
            });
        }
        if !self.rhs.is_finite() || self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidView(format!(
                "row `{}` has non-finite entries",
                self.label
            )));
        }
        if self.coefficients.iter().all(|c| *c == 0.0) {
            return Err(Error::ZeroRow(self.label.clone()));
        }
        Ok(())
    }
}

/// Inequalities `F p <= f` and equalities `H p = h`. The first equality is
/// always the normalization row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearConstraintSet {
    num_scenarios: usize,
    inequalities: Vec<ConstraintRow>,
    equalities: Vec<ConstraintRow>,
}

impl LinearConstraintSet {
    pub fn new(num_scenarios: usize) -> Self {
        Self {
            num_scenarios,
            inequalities: Vec::new(),
            equalities: vec![ConstraintRow::new(
                "normalization",
                vec![1.0; num_scenarios],
                1.0,
            )],
        }
    }

    pub fn num_scenarios(&self) -> usize {
        self.num_scenarios
    }

    pub fn inequalities(&self) -> &[ConstraintRow] {
        &self.inequalities
    }

    pub fn equalities(&self) -> &[ConstraintRow] {
        &self.equalities
    }

    pub fn num_rows(&self) -> usize {
        self.inequalities.len() + self.equalities.len()
    }

    /// True when only the normalization row is present.
    pub fn is_unconstrained(&self) -> bool {
        self.inequalities.is_empty() && self.equalities.len() == 1
    }

    pub fn push_le(&mut self, row: ConstraintRow) -> Result<()> {
        row.validate(self.num_scenarios)?;
        self.inequalities.push(row);
        Ok(())
    }

    /// Stores `a' p >= b` as `-a' p <= -b`.
    pub fn push_ge(&mut self, row: ConstraintRow) -> Result<()> {
        row.validate(self.num_scenarios)?;
        self.inequalities.push(row.negated());
        Ok(())
    }

    pub fn push_eq(&mut self, row: ConstraintRow) -> Result<()> {
        row.validate(self.num_scenarios)?;
        self.equalities.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: &LinearConstraintSet) -> Result<()> {
        if other.num_scenarios != self.num_scenarios {
            return Err(Error::LengthMismatch {
                expected: self.num_scenarios,
                actual: other.num_scenarios,
            });
        }
        self.inequalities.extend(other.inequalities.iter().cloned());
        self.equalities
            .extend(other.equalities.iter().skip(1).cloned());
        Ok(())
    }

    /// Largest violation at `p`: positive part of `F p - f` and `|H p - h|`.
    pub fn max_violation(&self, p: &[f64]) -> f64 {
        let ineq = self
            .inequalities
            .iter()
            .map(|r| (r.dot(p) - r.rhs).max(0.0));
        let eq = self.equalities.iter().map(|r| (r.dot(p) - r.rhs).abs());
        ineq.chain(eq).fold(0.0, f64::max)
    }

    /// Per-row residuals `F p - f` and `H p - h` at a probability vector.
    pub fn residuals(&self, p: &ProbabilityVector) -> (Vec<f64>, Vec<f64>) {
        let p = p.as_slice();
        (
            self.inequalities.iter().map(|r| r.dot(p) - r.rhs).collect(),
            self.equalities.iter().map(|r| r.dot(p) - r.rhs).collect(),
        )
    }
}
