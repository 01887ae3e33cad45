//! Scenario panels, probability vectors and the derived view panel.
//!
//! A [`ScenarioPanel`] is a `J x N` matrix of joint risk-factor scenarios.
//! Views never alter the scenarios; they only change the [`ProbabilityVector`]
//! attached to them.

mod expr;
mod stats;

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use expr::ColumnExpression;
pub(crate) use stats::copula_column as stats_copula_column;
pub use stats::{
    empirical_copula_ranks, weighted_correlation, weighted_covariance, weighted_cvar,
    weighted_mean, weighted_median, weighted_quantile, weighted_statistics, weighted_std,
    ColumnStatistics, WeightedStatistics,
};

/// Tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Loaded weights may be off by this much before renormalization becomes an error.
pub const LOAD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioPanel {
    factor_names: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl ScenarioPanel {
    /// Builds a panel from row-major data.
    pub fn new(factor_names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let n = factor_names.len();
        if n == 0 {
            return Err(Error::InvalidPanel("no factors".into()));
        }
        if data.len() % n != 0 {
            return Err(Error::InvalidPanel(format!(
                "{} values do not fill rows of {n} factors",
                data.len()
            )));
        }
        let rows = data.len() / n;
        if rows < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least 2 scenarios, got {rows}"
            )));
        }
        let mut seen = HashSet::new();
        for name in &factor_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidPanel(format!(
                    "duplicate factor name `{name}`"
                )));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!(
                "non-finite entry at row {}, column `{}`",
                pos / n,
                factor_names[pos % n]
            )));
        }
        Ok(Self {
            factor_names,
            rows,
            data,
        })
    }

    pub fn from_rows(factor_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = factor_names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidPanel(format!(
                "row {bad} has {} values, expected {n}",
                rows[bad].len()
            )));
        }
        Self::new(factor_names, rows.concat())
    }

    pub fn num_scenarios(&self) -> usize {
        self.rows
    }

    pub fn num_factors(&self) -> usize {
        self.factor_names.len()
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factor_names.iter().position(|f| f == name)
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.num_factors();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.num_factors())
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .factor_index(name)
            .ok_or_else(|| Error::UnknownFactor(name.to_string()))?;
        Ok(self.column(k))
    }

    /// Returns a new panel with extra columns, e.g. security prices per scenario,
    /// so that views can reference them by name.
    pub fn with_columns(&self, names: &[String], columns: &[Vec<f64>]) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                expected: names.len(),
                actual: columns.len(),
            });
        }
        for c in columns {
            if c.len() != self.rows {
                return Err(Error::LengthMismatch {
                    expected: self.rows,
                    actual: c.len(),
                });
            }
        }
        let mut factor_names = self.factor_names.clone();
        factor_names.extend(names.iter().cloned());
        let mut data = Vec::with_capacity(self.rows * factor_names.len());
        for (j, row) in self.rows().enumerate() {
            data.extend_from_slice(row);
            data.extend(columns.iter().map(|c| c[j]));
        }
        Self::new(factor_names, data)
    }

    /// Reads a CSV panel: header row of factor names, one scenario per line.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() {
                return Err(Error::InvalidPanel(format!(
                    "scenario {line} has {} fields, expected {}",
                    record.len(),
                    names.len()
                )));
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Parse(format!("scenario {line}: `{field}` is not a number"))
                })?;
                data.push(v);
            }
        }
        Self::new(names, data)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.factor_names)?;
        for row in self.rows() {
            wtr.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Evaluates each expression on every scenario.
    pub fn evaluate_view_columns(&self, expressions: &[ColumnExpression]) -> ViewPanel {
        let columns = expressions.iter().map(|e| e.evaluate_panel(self)).collect();
        ViewPanel {
            labels: expressions.iter().map(|e| e.source().to_string()).collect(),
            columns,
        }
    }

    /// Parses and evaluates expression strings against this panel.
    pub fn view_panel(&self, expressions: &[&str]) -> Result<ViewPanel> {
        let parsed = expressions
            .iter()
            .map(|s| ColumnExpression::parse(s, self.factor_names()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.evaluate_view_columns(&parsed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidProbabilities("empty".into()));
        }
        if let Some(j) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProbabilities(format!(
                "weight {j} is {}",
                weights[j]
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProbabilities(format!(
                "weights sum to {total}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    /// Divides by the total when it is within `tolerance` of one; larger drift is an error.
    pub fn renormalized(mut weights: Vec<f64>, tolerance: f64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > tolerance {
            return Err(Error::InvalidProbabilities(format!(
                "weights sum to {total}, more than {tolerance:e} away from 1"
            )));
        }
        if (total - 1.0).abs() > SUM_TOLERANCE {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Self::new(weights)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// Effective number of scenarios, `1 / sum p_j^2`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.0.iter().map(|p| p * p).sum::<f64>()
    }

    /// Reads one weight per line. Blank lines are skipped.
    pub fn read_lines<R: BufRead>(reader: R) -> Result<Self> {
        let mut weights = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let w: f64 = t
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: `{t}` is not a number", i + 1)))?;
            weights.push(w);
        }
        if let Some(j) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProbabilities(format!(
                "weight {j} is {}",
                weights[j]
            )));
        }
        Self::renormalized(weights, LOAD_TOLERANCE)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_lines(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Writes one weight per line with 17 significant digits.
    pub fn write_lines<W: Write>(&self, mut writer: W) -> Result<()> {
        for w in &self.0 {
            writeln!(writer, "{w:.16e}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_lines(file)
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `J x K` panel of view variables, one column per expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPanel {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl ViewPanel {
    pub fn new(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != columns.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                actual: columns.len(),
            });
        }
        if let Some(first) = columns.first() {
            for c in &columns {
                if c.len() != first.len() {
                    return Err(Error::LengthMismatch {
                        expected: first.len(),
                        actual: c.len(),
                    });
                }
            }
        }
        Ok(Self { labels, columns })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn column_by_label(&self, label: &str) -> Result<&[f64]> {
        self.index_of(label)
            .map(|k| self.column(k))
            .ok_or_else(|| Error::UnknownColumn(label.to_string()))
    }

    /// Appends columns not already present (by label).
    pub fn extend(&mut self, other: ViewPanel) {
        for (label, column) in other.labels.into_iter().zip(other.columns) {
            if self.index_of(&label).is_none() {
                self.labels.push(label);
                self.columns.push(column);
            }
        }
    }
}
