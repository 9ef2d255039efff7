//! Small synthetic datasets for tests and examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encode::{preprocess, PreprocessSpec, TabularDataset};
use super::raw::RawDataset;
use super::schema::{Cell, ColumnKind, ColumnRole, ColumnSchema, Criterion, Scalar, SensitiveSpec};

pub fn toy_schema() -> Vec<ColumnSchema> {
    vec![
        ColumnSchema::new("age", ColumnKind::Continuous, ColumnRole::Sensitive),
        ColumnSchema::new("job", ColumnKind::Categorical, ColumnRole::Feature),
        ColumnSchema::new("sex", ColumnKind::Binary, ColumnRole::Sensitive),
        ColumnSchema::new("income", ColumnKind::Continuous, ColumnRole::Feature),
        ColumnSchema::new("hours", ColumnKind::Continuous, ColumnRole::Feature),
        ColumnSchema::new("y", ColumnKind::Binary, ColumnRole::Target),
    ]
}

pub fn toy_spec() -> PreprocessSpec {
    PreprocessSpec {
        target_positive: Criterion::Eq(Scalar::Num(1.0)),
        sensitive: vec![
            SensitiveSpec::new("sex", Criterion::Eq(Scalar::Text("Male".into()))),
            SensitiveSpec::new("age", Criterion::Lt(40.0)),
        ],
    }
}

/// Raw toy table with `n` rows. The target depends on every column,
/// including both sensitive ones.
pub fn toy_raw(n: usize, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs = ["clerk", "exec", "sales"];
    let rows = (0..n)
        .map(|_| {
            let age = rng.random_range(18..80) as f64;
            let job = jobs[rng.random_range(0..3)];
            let male = rng.random_bool(0.6);
            let income = 20.0 + 50.0 * rng.random::<f64>() + if job == "exec" { 30.0 } else { 0.0 };
            let hours = (20.0 + 40.0 * rng.random::<f64>()).round();
            let logit = 0.06 * (age - 45.0) + if male { 1.2 } else { -0.8 } + 0.05 * (income - 55.0)
                + 0.03 * (hours - 40.0)
                + rng.random_range(-0.5..0.5);
            let y = u8::from(logit > 0.0);
            vec![
                Cell::Num(age),
                Cell::Cat(job.into()),
                Cell::Cat(if male { "Male" } else { "Female" }.into()),
                Cell::Num((income * 100.0).round() / 100.0),
                Cell::Num(hours),
                Cell::Cat(y.to_string()),
            ]
        })
        .collect();
    RawDataset {
        schema: toy_schema(),
        rows,
        parse_failures: Vec::new(),
    }
}

/// Encoded toy dataset; needs `n >= 2` so both sex values are likely present.
pub fn toy_dataset(n: usize, seed: u64) -> TabularDataset {
    preprocess(&toy_raw(n, seed), &toy_spec()).expect("toy data preprocesses")
}
