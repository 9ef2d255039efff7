//! Campaign configuration, execution and reporting.

mod config;
mod plan;
mod report;
mod run;

pub use config::{
    ColumnDecl, DatasetConfig, DpHyper, DpVariant, ExperimentConfig, InStageConfig, PostStageConfig, PreStageConfig,
    Stage, TargetModelConfig, EPSILON_CEILING, SCHEMA_VERSION,
};
pub use plan::{declared_variants, planned_cells, planned_pet_cells};
pub use report::{
    read_rows, read_summary, stage_summary, summarize, write_rows, write_summary, AuditReport, Campaign, CellFailure,
    ReportRow, RunKey, StageSummary, SummaryRow, TimingRow, Timings,
};
pub use run::{
    attack_report, dp_variant_train, explain_aux, faithfulness_on_test, load_bundle, prepare_dataset, run_pipeline, save_bundle, split_seed, stack_aux,
    train_baseline, train_synthetic, Prepared,
    TrainedModel,
};
