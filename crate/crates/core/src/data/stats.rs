use serde::{Deserialize, Serialize};

use super::encode::TabularDataset;
use super::schema::ColumnRole;
use crate::error::{Error, Result};

/// Pearson product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Config("pearson needs at least two values".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::ZeroVariance("first vector"));
    }
    if sbb == 0.0 {
        return Err(Error::ZeroVariance("second vector"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Which vector of a dataset to correlate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Feature(String),
    Target,
    Sensitive(String),
}

impl TabularDataset {
    pub fn column_values(&self, col: &ColumnRef) -> Result<Vec<f64>> {
        match col {
            ColumnRef::Target => Ok(self.target.iter().map(|&v| f64::from(v)).collect()),
            ColumnRef::Sensitive(name) => Ok(self
                .sensitive_labels(name)?
                .iter()
                .map(|&v| f64::from(v))
                .collect()),
            ColumnRef::Feature(name) => {
                let k = self
                    .encoding
                    .features
                    .iter()
                    .position(|f| f.name == *name)
                    .ok_or_else(|| Error::Schema(format!("no feature column `{name}`")))?;
                Ok(self.x.column(k).to_vec())
            }
        }
    }

    pub fn pearson(&self, a: &ColumnRef, b: &ColumnRef) -> Result<f64> {
        pearson(&self.column_values(a)?, &self.column_values(b)?)
    }
}

/// Correlation of one sensitive attribute against the target and against every
/// non-sensitive feature column (mean ± standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRow {
    pub attribute: String,
    pub vs_target: f64,
    pub vs_features_mean: f64,
    pub vs_features_std: f64,
    pub n_features: usize,
}

/// Correlation screening; zero-variance feature columns are skipped.
pub fn correlation_screening(ds: &TabularDataset) -> Result<Vec<ScreeningRow>> {
    let schema = &ds.encoding.schema;
    let non_sensitive: Vec<usize> = ds
        .encoding
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            schema
                .iter()
                .find(|c| c.name == f.source)
                .is_some_and(|c| c.role == ColumnRole::Feature)
        })
        .map(|(k, _)| k)
        .collect();
    let target = ds.column_values(&ColumnRef::Target)?;
    let mut rows = Vec::new();
    for attr in ds.sensitive.keys() {
        let s = ds.column_values(&ColumnRef::Sensitive(attr.clone()))?;
        let vs_target = pearson(&s, &target)?;
        let coeffs: Vec<f64> = non_sensitive
            .iter()
            .filter_map(|&k| pearson(&s, &ds.x.column(k).to_vec()).ok())
            .collect();
        let m = coeffs.len().max(1) as f64;
        let mean = coeffs.iter().sum::<f64>() / m;
        let var = coeffs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / m;
        rows.push(ScreeningRow {
            attribute: attr.clone(),
            vs_target,
            vs_features_mean: mean,
            vs_features_std: var.sqrt(),
            n_features: coeffs.len(),
        });
    }
    Ok(rows)
}
