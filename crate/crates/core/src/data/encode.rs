use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::raw::RawDataset;
use super::schema::{Cell, ColumnKind, ColumnRole, ColumnSchema, Criterion, SensitiveSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Min-max scaled into [0, 1]; `integral` columns decode back to whole numbers.
    Continuous { min: f64, max: f64, integral: bool },
    OneHot { category: String },
    Binary { positive: String, negative: Option<String> },
}

/// One column of the encoded feature matrix and the raw column it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub source: String,
    pub kind: FeatureKind,
}

/// Everything needed to move between raw rows and the encoded matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub schema: Vec<ColumnSchema>,
    pub features: Vec<FeatureColumn>,
    pub target: Criterion,
    /// Raw values written for target labels (negative, positive) when decoding.
    pub target_values: (String, String),
    pub sensitive: Vec<SensitiveSpec>,
}

/// Encoded, fully-populated table: feature matrix plus target and sensitive labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub encoding: Encoding,
    pub x: Array2<f64>,
    pub target: Vec<u8>,
    pub sensitive: BTreeMap<String, Vec<u8>>,
    pub record_ids: Vec<u64>,
}

/// How the target and sensitive columns are binarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_positive: Criterion,
    pub sensitive: Vec<SensitiveSpec>,
}

fn is_integral(v: f64) -> bool {
    v.fract() == 0.0
}

impl Encoding {
    /// Learns categories and scaling ranges from the complete rows of `raw`.
    pub fn fit(raw: &RawDataset, spec: &PreprocessSpec) -> Result<Self> {
        for s in &spec.sensitive {
            if raw.column_index(&s.attribute).is_none() {
                return Err(Error::MissingAttribute(s.attribute.clone()));
            }
        }
        let complete: Vec<&Vec<Cell>> = raw
            .rows
            .iter()
            .filter(|r| !r.iter().any(Cell::is_missing))
            .collect();
        if complete.is_empty() {
            return Err(Error::EmptyAfterPreprocess);
        }

        let target_idx = raw
            .schema
            .iter()
            .position(|c| c.role == ColumnRole::Target)
            .ok_or_else(|| Error::Schema("no target column".into()))?;
        let mut neg = None;
        let mut pos = None;
        for row in &complete {
            let cell = &row[target_idx];
            let slot = if spec.target_positive.eval(cell) {
                &mut pos
            } else {
                &mut neg
            };
            if slot.is_none() {
                *slot = Some(cell.render());
            }
        }

        let mut features = Vec::new();
        for (j, col) in raw.schema.iter().enumerate() {
            if col.role == ColumnRole::Target {
                continue;
            }
            match col.kind {
                ColumnKind::Continuous => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    let mut integral = true;
                    for row in &complete {
                        if let Cell::Num(v) = row[j] {
                            min = min.min(v);
                            max = max.max(v);
                            integral &= is_integral(v);
                        }
                    }
                    features.push(FeatureColumn {
                        name: col.name.clone(),
                        source: col.name.clone(),
                        kind: FeatureKind::Continuous { min, max, integral },
                    });
                }
                ColumnKind::Categorical => {
                    let cats: BTreeSet<String> =
                        complete.iter().map(|r| r[j].render()).collect();
                    for cat in cats {
                        features.push(FeatureColumn {
                            name: format!("{}_{}", col.name, cat),
                            source: col.name.clone(),
                            kind: FeatureKind::OneHot { category: cat },
                        });
                    }
                }
                ColumnKind::Binary => {
                    let cats: BTreeSet<String> =
                        complete.iter().map(|r| r[j].render()).collect();
                    if cats.len() > 2 {
                        return Err(Error::Schema(format!(
                            "binary column `{}` has {} distinct values",
                            col.name,
                            cats.len()
                        )));
                    }
                    let mut it = cats.into_iter().rev();
                    let positive = it.next().unwrap_or_default();
                    let negative = it.next();
                    features.push(FeatureColumn {
                        name: col.name.clone(),
                        source: col.name.clone(),
                        kind: FeatureKind::Binary { positive, negative },
                    });
                }
            }
        }

        Ok(Self {
            schema: raw.schema.clone(),
            features,
            target: spec.target_positive.clone(),
            target_values: (
                neg.unwrap_or_else(|| "0".into()),
                pos.unwrap_or_else(|| "1".into()),
            ),
            sensitive: spec.sensitive.clone(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Encodes complete rows; rows with any missing cell are dropped. Record ids
    /// are the row positions in `raw`.
    pub fn transform(&self, raw: &RawDataset) -> Result<TabularDataset> {
        if raw.schema != self.schema {
            return Err(Error::Schema("raw schema differs from encoding schema".into()));
        }
        let col_index = |name: &str| raw.column_index(name).expect("schema checked");
        let target_idx = self
            .schema
            .iter()
            .position(|c| c.role == ColumnRole::Target)
            .expect("validated schema");
        let sources: Vec<usize> = self.features.iter().map(|f| col_index(&f.source)).collect();
        let sens_idx: Vec<usize> = self
            .sensitive
            .iter()
            .map(|s| raw.column_index(&s.attribute))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::MissingAttribute("sensitive attribute".into()))?;

        let kept: Vec<usize> = (0..raw.len())
            .filter(|&i| !raw.rows[i].iter().any(Cell::is_missing))
            .collect();
        let d = self.features.len();
        let mut x = Array2::<f64>::zeros((kept.len(), d));
        let mut target = Vec::with_capacity(kept.len());
        let mut sensitive: BTreeMap<String, Vec<u8>> = self
            .sensitive
            .iter()
            .map(|s| (s.attribute.clone(), Vec::with_capacity(kept.len())))
            .collect();

        for (r, &i) in kept.iter().enumerate() {
            let row = &raw.rows[i];
            for (k, feat) in self.features.iter().enumerate() {
                let cell = &row[sources[k]];
                x[[r, k]] = match &feat.kind {
                    FeatureKind::Continuous { min, max, .. } => match cell {
                        Cell::Num(v) => scale(*v, *min, *max),
                        other => other
                            .render()
                            .parse::<f64>()
                            .map(|v| scale(v, *min, *max))
                            .unwrap_or(0.0),
                    },
                    // unknown categories leave the whole group at zero
                    FeatureKind::OneHot { category } => f64::from(u8::from(cell.render() == *category)),
                    FeatureKind::Binary { positive, .. } => f64::from(u8::from(cell.render() == *positive)),
                };
            }
            target.push(u8::from(self.target.eval(&row[target_idx])));
            for (spec, &si) in self.sensitive.iter().zip(&sens_idx) {
                sensitive
                    .get_mut(&spec.attribute)
                    .expect("initialized")
                    .push(u8::from(spec.positive.eval(&row[si])));
            }
        }
        if kept.is_empty() && !raw.is_empty() {
            return Err(Error::EmptyAfterPreprocess);
        }
        Ok(TabularDataset {
            encoding: self.clone(),
            x,
            target,
            sensitive,
            record_ids: kept.iter().map(|&i| i as u64).collect(),
        })
    }

    /// Inverse of [`Encoding::transform`] on the feature, target and schema columns.
    /// Rows of an unknown one-hot group decode to a missing cell.
    pub fn decode(&self, ds: &TabularDataset) -> RawDataset {
        let n = ds.len();
        let mut rows = vec![vec![Cell::Missing; self.schema.len()]; n];
        for (j, col) in self.schema.iter().enumerate() {
            if col.role == ColumnRole::Target {
                for (r, row) in rows.iter_mut().enumerate() {
                    let v = if ds.target[r] == 1 {
                        &self.target_values.1
                    } else {
                        &self.target_values.0
                    };
                    row[j] = match col.kind {
                        ColumnKind::Continuous => v.parse().map(Cell::Num).unwrap_or(Cell::Missing),
                        _ => Cell::Cat(v.clone()),
                    };
                }
                continue;
            }
            let feats: Vec<(usize, &FeatureColumn)> = self
                .features
                .iter()
                .enumerate()
                .filter(|(_, f)| f.source == col.name)
                .collect();
            for (r, row) in rows.iter_mut().enumerate() {
                row[j] = decode_cell(&feats, ds, r);
            }
        }
        RawDataset {
            schema: self.schema.clone(),
            rows,
            parse_failures: Vec::new(),
        }
    }

    /// Continuous feature indices.
    pub fn continuous_indices(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.kind, FeatureKind::Continuous { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Feature indices grouped by source column, in feature order.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, f) in self.features.iter().enumerate() {
            match out.last_mut() {
                Some((src, idx)) if *src == f.source => idx.push(i),
                _ => out.push((f.source.clone(), vec![i])),
            }
        }
        out
    }
}

fn scale(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((v - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn decode_cell(feats: &[(usize, &FeatureColumn)], ds: &TabularDataset, r: usize) -> Cell {
    let Some((_, first)) = feats.first() else {
        return Cell::Missing;
    };
    match &first.kind {
        FeatureKind::Continuous { min, max, integral } => {
            let s = ds.x[[r, feats[0].0]];
            let v = if max > min { min + s * (max - min) } else { *min };
            Cell::Num(if *integral { v.round() } else { v })
        }
        FeatureKind::Binary { positive, negative } => {
            if ds.x[[r, feats[0].0]] >= 0.5 {
                Cell::Cat(positive.clone())
            } else {
                negative.clone().map(Cell::Cat).unwrap_or(Cell::Missing)
            }
        }
        FeatureKind::OneHot { .. } => feats
            .iter()
            .find(|(k, _)| ds.x[[r, *k]] >= 0.5)
            .and_then(|(_, f)| match &f.kind {
                FeatureKind::OneHot { category } => Some(Cell::Cat(category.clone())),
                _ => None,
            })
            .unwrap_or(Cell::Missing),
    }
}

/// Drops incomplete rows, one-hot encodes categoricals, min-max scales
/// continuous columns and binarizes target and sensitive attributes.
pub fn preprocess(raw: &RawDataset, spec: &PreprocessSpec) -> Result<TabularDataset> {
    let enc = Encoding::fit(raw, spec)?;
    enc.transform(raw)
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn sensitive_labels(&self, attribute: &str) -> Result<&[u8]> {
        self.sensitive
            .get(attribute)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingAttribute(attribute.to_string()))
    }

    /// Rows at the given positions, in that order.
    pub fn select(&self, positions: &[usize]) -> TabularDataset {
        TabularDataset {
            encoding: self.encoding.clone(),
            x: self.x.select(Axis(0), positions),
            target: positions.iter().map(|&i| self.target[i]).collect(),
            sensitive: self
                .sensitive
                .iter()
                .map(|(k, v)| (k.clone(), positions.iter().map(|&i| v[i]).collect()))
                .collect(),
            record_ids: positions.iter().map(|&i| self.record_ids[i]).collect(),
        }
    }

    /// Fraction of rows with target label 1.
    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.target.iter().map(|&t| f64::from(t)).sum::<f64>() / self.len() as f64
    }

    /// Writes `record_id`, the feature columns, `target`, then one
    /// `sensitive:<name>` column per attribute.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["record_id".to_string()];
        header.extend(self.encoding.features.iter().map(|f| f.name.clone()));
        header.push("target".into());
        header.extend(self.sensitive.keys().map(|k| format!("sensitive:{k}")));
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec = vec![self.record_ids[r].to_string()];
            rec.extend(self.x.row(r).iter().map(|v| format!("{v}")));
            rec.push(self.target[r].to_string());
            rec.extend(self.sensitive.values().map(|v| v[r].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, encoding: &Encoding) -> Result<Self> {
        let parse_err = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            detail,
        };
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        let d = encoding.n_features();
        let attrs: Vec<String> = header
            .iter()
            .skip(d + 2)
            .map(|h| {
                h.strip_prefix("sensitive:")
                    .map(str::to_string)
                    .ok_or_else(|| parse_err(format!("unexpected column `{h}`")))
            })
            .collect::<Result<_>>()?;
        let names: Vec<&str> = header.iter().skip(1).take(d).collect();
        if names != encoding.feature_names() {
            return Err(parse_err("feature columns do not match encoding".into()));
        }
        let mut values = Vec::new();
        let mut ids = Vec::new();
        let mut target = Vec::new();
        let mut sensitive: BTreeMap<String, Vec<u8>> =
            attrs.iter().map(|a| (a.clone(), Vec::new())).collect();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(format!("bad value in column {i}")))
            };
            ids.push(num(0)? as u64);
            for k in 0..d {
                values.push(num(k + 1)?);
            }
            target.push(num(d + 1)? as u8);
            for (a, attr) in attrs.iter().enumerate() {
                sensitive.get_mut(attr).expect("init").push(num(d + 2 + a)? as u8);
            }
        }
        let x = Array2::from_shape_vec((ids.len(), d), values)
            .map_err(|e| parse_err(e.to_string()))?;
        Ok(Self {
            encoding: encoding.clone(),
            x,
            target,
            sensitive,
            record_ids: ids,
        })
    }
}
