//! Series, schemas, construct tables and per-series z-scoring.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::{Error, Result};

/// Ordered channel names with free-text units.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSchema {
    names: Vec<String>,
    units: Vec<String>,
}

impl ChannelSchema {
    pub fn new(names: Vec<String>, units: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidSchema("no channels".into()));
        }
        if units.len() != names.len() {
            return Err(Error::InvalidSchema(format!(
                "{} names but {} units",
                names.len(),
                units.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::InvalidSchema("empty channel name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate channel `{n}`")));
            }
        }
        Ok(Self { names, units })
    }

    /// Schema with empty units.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let units = names.iter().map(|_| String::new()).collect();
        Self::new(names, units)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One participant's `T × D` signal, stored row-major (rows are time steps).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries {
    pub id: String,
    values: Vec<f64>,
    dim: usize,
}

impl MultiSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>, dim: usize) -> Result<Self> {
        let id = id.into();
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::SchemaMismatch {
                id,
                reason: format!("{} values do not form rows of width {dim}", values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id, row: pos / dim, column: pos % dim });
        }
        Ok(Self { id, values, dim })
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let id = id.into();
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::SchemaMismatch {
                id,
                reason: format!("row {bad} has {} columns, expected {dim}", rows[bad].len()),
            });
        }
        Self::new(id, rows.concat(), dim)
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of channels `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// The `lag` frames before `t`, oldest first, as one contiguous slice.
    pub fn history(&self, t: usize, lag: usize) -> &[f64] {
        &self.values[(t - lag) * self.dim..t * self.dim]
    }

    pub fn channel(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.dim).copied()
    }
}

/// Per-series ground truth: numeric constructs and categorical demographics.
///
/// Every column is aligned with `ids`; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstructTable {
    pub ids: Vec<String>,
    pub numeric: Vec<(String, Vec<Option<f64>>)>,
    pub categorical: Vec<(String, Vec<Option<String>>)>,
}

impl ConstructTable {
    pub fn is_empty(&self) -> bool {
        self.numeric.is_empty() && self.categorical.is_empty()
    }

    fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// Numeric column `name` re-aligned to `series_ids`.
    pub fn numeric_for(&self, name: &str, series_ids: &[String]) -> Option<Vec<Option<f64>>> {
        let (_, col) = self.numeric.iter().find(|(n, _)| n == name)?;
        Some(series_ids.iter().map(|id| self.row_of(id).and_then(|r| col[r])).collect())
    }

    /// Categorical column `name` re-aligned to `series_ids`.
    pub fn categorical_for(&self, name: &str, series_ids: &[String]) -> Option<Vec<Option<String>>> {
        let (_, col) = self.categorical.iter().find(|(n, _)| n == name)?;
        Some(series_ids.iter().map(|id| self.row_of(id).and_then(|r| col[r].clone())).collect())
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSeries(id.clone()));
            }
        }
        let n = self.ids.len();
        for (name, col) in &self.numeric {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!("construct `{name}` has {} rows, expected {n}", col.len())));
            }
        }
        for (name, col) in &self.categorical {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!("demographic `{name}` has {} rows, expected {n}", col.len())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: ChannelSchema,
    pub series: Vec<MultiSeries>,
    /// Unnormalized values, kept after [`Dataset::normalized`].
    pub raw: Option<Vec<MultiSeries>>,
    pub constructs: Option<ConstructTable>,
}

impl Dataset {
    pub fn new(schema: ChannelSchema, series: Vec<MultiSeries>, constructs: Option<ConstructTable>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &series {
            if s.dim() != schema.len() {
                return Err(Error::SchemaMismatch {
                    id: s.id.clone(),
                    reason: format!("{} channels, schema has {}", s.dim(), schema.len()),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateSeries(s.id.clone()));
            }
        }
        if let Some(table) = &constructs {
            table.validate()?;
            if let Some(bad) = table.ids.iter().find(|id| !seen.contains(id.as_str())) {
                return Err(Error::UnknownSeries(bad.clone()));
            }
        }
        Ok(Self { schema, series, raw: None, constructs })
    }

    pub fn ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// The unnormalized series: `raw` when present, else `series`.
    pub fn raw_series(&self) -> &[MultiSeries] {
        self.raw.as_deref().unwrap_or(&self.series)
    }

    /// Z-scores every series; the input values are kept in `raw`.
    pub fn normalized(&self) -> (Dataset, NormalizationReport) {
        let mut report = NormalizationReport::default();
        let series = self
            .series
            .iter()
            .map(|s| {
                let (out, constant) = zscore_normalize(s);
                for c in constant {
                    report.constant_channels.push((s.id.clone(), self.schema.names()[c].clone()));
                }
                out
            })
            .collect();
        let ds = Dataset {
            schema: self.schema.clone(),
            series,
            raw: Some(self.raw_series().to_vec()),
            constructs: self.constructs.clone(),
        };
        (ds, report)
    }
}

/// Channels found constant during normalization, as `(series id, channel)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizationReport {
    pub constant_channels: Vec<(String, String)>,
}

/// Per-channel z-score with the population standard deviation.
///
/// Constant channels become all zeros; their indices are returned.
pub fn zscore_normalize(series: &MultiSeries) -> (MultiSeries, Vec<usize>) {
    let t = series.len();
    let d = series.dim();
    let mut out = series.values.clone();
    let mut constant = Vec::new();
    for j in 0..d {
        let n = t as f64;
        let mean = series.channel(j).sum::<f64>() / n;
        let var = series.channel(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = sqrt(var);
        if t == 0 || std <= 1e-12 * (1.0 + mean.abs()) {
            constant.push(j);
            for i in 0..t {
                out[i * d + j] = 0.0;
            }
        } else {
            for i in 0..t {
                out[i * d + j] = (series.values[i * d + j] - mean) / std;
            }
        }
    }
    (MultiSeries { id: series.id.clone(), values: out, dim: d }, constant)
}
