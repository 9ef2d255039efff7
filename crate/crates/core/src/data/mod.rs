//! Tabular ingestion: CSV loading, encoding, splitting and correlation screening.

mod encode;
pub mod fixtures;
mod raw;
mod schema;
mod split;
mod stats;

pub use encode::{preprocess, Encoding, FeatureColumn, FeatureKind, PreprocessSpec, TabularDataset};
pub use raw::{load_csv, RawDataset};
pub use schema::{
    validate_schema, Cell, ColumnKind, ColumnRole, ColumnSchema, Criterion, Scalar, SensitiveSpec,
};
pub use split::{split, split_sizes, SplitBundle};
pub use stats::{correlation_screening, pearson, ColumnRef, ScreeningRow};

#[cfg(test)]
pub(crate) use fixtures as testing;
