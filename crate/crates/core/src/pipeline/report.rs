use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::error::{Error, Result};

/// Identifies one report row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub dataset: String,
    pub stage: Stage,
    pub variant: String,
    pub explainer: String,
    pub attribute: String,
    pub repetition: usize,
}

impl RunKey {
    pub fn cell_label(&self) -> String {
        format!("{}/{}/{}/{}/{}", self.dataset, self.stage, self.variant, self.explainer, self.attribute)
    }
}

/// Deterministic part of a result; this is what `report.csv` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub stage: Stage,
    pub variant: String,
    pub explainer: String,
    pub attribute: String,
    pub repetition: usize,
    pub attack_seed: u64,
    pub attack_epochs: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub attack_success: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub random_guess: f64,
    pub random_guess_uniform: f64,
    pub faithfulness_correlation: Option<f64>,
    pub faithfulness_estimate: Option<f64>,
    pub sufficiency: Option<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epsilon: Option<f64>,
    pub noise_multiplier: Option<f64>,
    pub data_validity: Option<f64>,
    pub data_structure: Option<f64>,
    pub model_digest: String,
}

impl ReportRow {
    pub fn key(&self) -> RunKey {
        RunKey {
            dataset: self.dataset.clone(),
            stage: self.stage,
            variant: self.variant.clone(),
            explainer: self.explainer.clone(),
            attribute: self.attribute.clone(),
            repetition: self.repetition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub explain_ms_per_record: f64,
    pub synth_ms_per_record: Option<f64>,
    pub noise_ms_per_record: Option<f64>,
    pub attack_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub row: ReportRow,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

/// Everything a campaign produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub name: String,
    pub reports: Vec<AuditReport>,
    pub failures: Vec<CellFailure>,
}

impl Campaign {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.reports.iter().map(|r| r.row.clone()).collect()
    }

    /// Distinct cells, i.e. run keys without the repetition index.
    pub fn cell_count(&self) -> usize {
        let mut cells: Vec<String> = self.reports.iter().map(|r| r.row.key().cell_label()).collect();
        cells.sort();
        cells.dedup();
        cells.len()
    }

    pub fn cells_in_stage(&self, stage: Stage) -> usize {
        let mut cells: Vec<String> = self
            .reports
            .iter()
            .filter(|r| r.row.stage == stage)
            .map(|r| r.row.key().cell_label())
            .collect();
        cells.sort();
        cells.dedup();
        cells.len()
    }

    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    /// Writes `report.csv`, `report.json`, `timings.csv`, `summary.csv` and
    /// `stage_summary.csv` into `dir`. Summaries are skipped without a baseline.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(&dir.join("report.csv"), &self.rows())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join("report.json");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let timings: Vec<TimingRow> = self.reports.iter().map(TimingRow::from).collect();
        write_csv(&dir.join("timings.csv"), &timings)?;
        match summarize(&self.rows()) {
            Ok(summary) => {
                write_csv(&dir.join("summary.csv"), &summary)?;
                write_csv(&dir.join("stage_summary.csv"), &stage_summary(&summary))?;
            }
            Err(Error::MissingBaseline(k)) if self.rows().iter().all(|r| r.stage != Stage::Baseline) => {
                log::warn!("no baseline rows ({k}); summary skipped");
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub dataset: String,
    pub stage: Stage,
    pub variant: String,
    pub explainer: String,
    pub attribute: String,
    pub repetition: usize,
    pub train_seconds: f64,
    pub explain_ms_per_record: f64,
    pub synth_ms_per_record: Option<f64>,
    pub noise_ms_per_record: Option<f64>,
    pub attack_seconds: f64,
}

impl From<&AuditReport> for TimingRow {
    fn from(r: &AuditReport) -> Self {
        let t = &r.timings;
        Self {
            dataset: r.row.dataset.clone(),
            stage: r.row.stage,
            variant: r.row.variant.clone(),
            explainer: r.row.explainer.clone(),
            attribute: r.row.attribute.clone(),
            repetition: r.row.repetition,
            train_seconds: t.train_seconds,
            explain_ms_per_record: t.explain_ms_per_record,
            synth_ms_per_record: t.synth_ms_per_record,
            noise_ms_per_record: t.noise_ms_per_record,
            attack_seconds: t.attack_seconds,
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Rows are written sorted by run key.
pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(ReportRow::key);
    write_csv(path, &sorted)
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    read_csv(path)
}

/// Mean result of one cell next to its baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub stage: Stage,
    pub variant: String,
    pub explainer: String,
    pub attribute: String,
    pub repetitions: usize,
    pub attack_success: f64,
    pub f1: f64,
    pub baseline_attack_success: f64,
    pub baseline_f1: f64,
    pub delta_attack_success: f64,
    pub delta_f1: f64,
    pub mitigated: bool,
    pub random_guess: f64,
    pub random_guess_uniform: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub cells: usize,
    pub mitigated: usize,
    pub fraction_mitigated: f64,
    pub mean_delta_attack_success: f64,
}

#[derive(Default)]
struct Acc {
    n: usize,
    success: f64,
    f1: f64,
    guess: f64,
    uniform: f64,
}

/// Per-cell means with deltas against the baseline cell sharing
/// (dataset, explainer, attribute). Every non-baseline cell needs one.
pub fn summarize(rows: &[ReportRow]) -> Result<Vec<SummaryRow>> {
    let mut cells: BTreeMap<(String, Stage, String, String, String), Acc> = BTreeMap::new();
    for r in rows {
        let a = cells
            .entry((r.dataset.clone(), r.stage, r.variant.clone(), r.explainer.clone(), r.attribute.clone()))
            .or_default();
        a.n += 1;
        a.success += r.attack_success;
        a.f1 += r.f1;
        a.guess += r.random_guess;
        a.uniform += r.random_guess_uniform;
    }
    let baselines: BTreeMap<(&str, &str, &str), (f64, f64)> = cells
        .iter()
        .filter(|(k, _)| k.1 == Stage::Baseline)
        .map(|(k, a)| ((k.0.as_str(), k.3.as_str(), k.4.as_str()), (a.success / a.n as f64, a.f1 / a.n as f64)))
        .collect();
    let mut out = Vec::with_capacity(cells.len());
    for (k, a) in &cells {
        let n = a.n as f64;
        let (success, f1) = (a.success / n, a.f1 / n);
        let &(b_success, b_f1) = baselines
            .get(&(k.0.as_str(), k.3.as_str(), k.4.as_str()))
            .ok_or_else(|| Error::MissingBaseline(format!("{}/{}/{}", k.0, k.3, k.4)))?;
        let delta = success - b_success;
        out.push(SummaryRow {
            dataset: k.0.clone(),
            stage: k.1,
            variant: k.2.clone(),
            explainer: k.3.clone(),
            attribute: k.4.clone(),
            repetitions: a.n,
            attack_success: success,
            f1,
            baseline_attack_success: b_success,
            baseline_f1: b_f1,
            delta_attack_success: delta,
            delta_f1: f1 - b_f1,
            mitigated: k.1 != Stage::Baseline && delta < 0.0,
            random_guess: a.guess / n,
            random_guess_uniform: a.uniform / n,
        });
    }
    if out.iter().all(|s| s.stage == Stage::Baseline) && !out.is_empty() {
        log::info!("summary holds baseline cells only");
    }
    Ok(out)
}

/// Mitigation fraction per PET stage.
pub fn stage_summary(summary: &[SummaryRow]) -> Vec<StageSummary> {
    Stage::ALL
        .into_iter()
        .filter(|&s| s != Stage::Baseline)
        .filter_map(|stage| {
            let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.stage == stage).collect();
            if rows.is_empty() {
                return None;
            }
            let mitigated = rows.iter().filter(|r| r.mitigated).count();
            Some(StageSummary {
                stage,
                cells: rows.len(),
                mitigated,
                fraction_mitigated: mitigated as f64 / rows.len() as f64,
                mean_delta_attack_success: rows.iter().map(|r| r.delta_attack_success).sum::<f64>() / rows.len() as f64,
            })
        })
        .collect()
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    write_csv(path, summary)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_csv(path)
}
