use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{explain_ig, explain_lime, explain_sg, explain_shap, ExplainContext, ExplainerConfig, Method};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::Differentiable;
use crate::noise::NoiseRecord;
use crate::seed::derive_seed;

/// Everything written to the JSON sidecar next to an explanation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMeta {
    pub method: Method,
    pub config_digest: String,
    pub feature_names: Vec<String>,
    pub seconds: f64,
    #[serde(default)]
    pub perturbation: Option<NoiseRecord>,
}

/// One attribution row per record, one column per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMatrix {
    pub meta: ExplanationMeta,
    pub record_ids: Vec<u64>,
    pub values: Array2<f64>,
}

impl ExplanationMatrix {
    pub fn method(&self) -> Method {
        self.meta.method
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn ms_per_record(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            1e3 * self.meta.seconds / self.len() as f64
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows at the given positions.
    pub fn select(&self, positions: &[usize]) -> ExplanationMatrix {
        ExplanationMatrix {
            meta: self.meta.clone(),
            record_ids: positions.iter().map(|&i| self.record_ids[i]).collect(),
            values: self.values.select(Axis(0), positions),
        }
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// CSV of `record_id` plus one column per feature, and a JSON sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["record_id".to_string()];
        header.extend(self.meta.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.record_ids.iter().zip(self.values.rows()) {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(side, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: ExplanationMeta = serde_json::from_str(&text)?;
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let names: Vec<&str> = header.iter().skip(1).collect();
        if names != meta.feature_names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Schema(format!("{}: header disagrees with sidecar", path.display())));
        }
        let d = names.len();
        let mut ids = Vec::new();
        let mut flat = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    detail: format!("row {}: {e}", line + 1),
                })
            };
            ids.push(rec[0].parse::<u64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                detail: format!("row {}: {e}", line + 1),
            })?);
            for s in rec.iter().skip(1) {
                flat.push(parse(s)?);
            }
        }
        let values = Array2::from_shape_vec((ids.len(), d), flat).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(Self { meta, record_ids: ids, values })
    }
}

/// Explains every row of `x` in parallel. Row `i` uses the seed derived from
/// `(seed, record_ids[i])`, so output does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn explain_rows<M: Differentiable>(
    model: &M,
    x: ArrayView2<'_, f64>,
    record_ids: &[u64],
    feature_names: Vec<String>,
    method: Method,
    cfg: &ExplainerConfig,
    ctx: &ExplainContext,
    seed: u64,
) -> Result<ExplanationMatrix> {
    cfg.validate()?;
    if x.nrows() != record_ids.len() {
        return Err(Error::Dimension { expected: x.nrows(), got: record_ids.len() });
    }
    if feature_names.len() != x.ncols() {
        return Err(Error::Dimension { expected: x.ncols(), got: feature_names.len() });
    }
    let start = Instant::now();
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let s = derive_seed(seed, record_ids[i]);
            let phi = match method {
                Method::Ig => explain_ig(model, row, cfg),
                Method::Sg => explain_sg(model, row, cfg, s),
                Method::Shap => explain_shap(model, row, ctx.background.view(), cfg, s),
                Method::Lime => explain_lime(model, row, ctx, cfg, s),
            }?;
            Ok(phi.to_vec())
        })
        .collect::<Result<_>>()?;
    let seconds = start.elapsed().as_secs_f64();
    let d = x.ncols();
    let values = Array2::from_shape_vec((rows.len(), d), rows.into_iter().flatten().collect())
        .expect("rows have d columns");
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{method} produced non-finite attributions")));
    }
    Ok(ExplanationMatrix {
        meta: ExplanationMeta {
            method,
            config_digest: cfg.digest(method),
            feature_names,
            seconds,
            perturbation: None,
        },
        record_ids: record_ids.to_vec(),
        values,
    })
}

/// Explains every record of `ds` in record order.
pub fn explain_dataset<M: Differentiable>(
    model: &M,
    ds: &TabularDataset,
    method: Method,
    cfg: &ExplainerConfig,
    ctx: &ExplainContext,
    seed: u64,
) -> Result<ExplanationMatrix> {
    let names = ds.encoding.feature_names().into_iter().map(str::to_string).collect();
    explain_rows(model, ds.x.view(), &ds.record_ids, names, method, cfg, ctx, seed)
}
