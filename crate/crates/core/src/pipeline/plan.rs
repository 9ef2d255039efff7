use std::collections::BTreeMap;

use super::config::{ExperimentConfig, Stage};

/// Number of PET variants the stage declares, including bookkeeping-only
/// generators for the pre stage.
pub fn declared_variants(cfg: &ExperimentConfig, stage: Stage) -> usize {
    match stage {
        Stage::Baseline => 1,
        Stage::Pre => cfg.pre.declared_generators.unwrap_or(cfg.pre.generators.len()),
        Stage::In => cfg.in_model.variants().len(),
        Stage::Post => cfg.post.variants.len(),
    }
}

/// Attack cells per stage: variants × explainers × Σ attributes over datasets.
pub fn planned_cells(cfg: &ExperimentConfig) -> BTreeMap<Stage, usize> {
    let attributes: usize = cfg.datasets.iter().map(|d| d.sensitive.len()).sum();
    cfg.stages
        .iter()
        .map(|&s| (s, declared_variants(cfg, s) * cfg.explainers.len() * attributes))
        .collect()
}

/// PET cells only; the baseline is the reference, not an attack on a defence.
pub fn planned_pet_cells(cfg: &ExperimentConfig) -> usize {
    planned_cells(cfg)
        .iter()
        .filter(|(s, _)| **s != Stage::Baseline)
        .map(|(_, n)| n)
        .sum()
}
