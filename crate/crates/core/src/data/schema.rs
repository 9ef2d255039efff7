use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Sensitive,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "default_role")]
    pub role: ColumnRole,
}

fn default_role() -> ColumnRole {
    ColumnRole::Feature
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }
}

/// Checks the schema-level invariants: unique names, exactly one target,
/// at least one sensitive column.
pub fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    let mut seen = HashSet::new();
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
        }
    }
    let targets = schema
        .iter()
        .filter(|c| c.role == ColumnRole::Target)
        .count();
    if targets != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one target column, found {targets}"
        )));
    }
    if !schema.iter().any(|c| c.role == ColumnRole::Sensitive) {
        return Err(Error::Schema("no column has role `sensitive`".into()));
    }
    Ok(())
}

/// A single raw cell after parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Cat(s) => s.trim().parse().ok(),
            Cell::Missing => None,
        }
    }

    /// Text form used when writing a raw CSV back out.
    pub fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Cat(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

/// Predicate that splits a raw column into a positive and a negative class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum Criterion {
    Eq(Scalar),
    Ne(Scalar),
    Lt(f64),
    Le(f64),
    Gt(f64),
    Ge(f64),
    In(Vec<Scalar>),
}

/// String-or-number literal in a criterion; compared textually against
/// categorical cells and numerically against numeric ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Text(String),
}

impl Scalar {
    fn matches(&self, cell: &Cell) -> bool {
        match (self, cell) {
            (_, Cell::Missing) => false,
            (Scalar::Text(t), Cell::Cat(s)) => t == s,
            (Scalar::Num(v), c) => c.as_number() == Some(*v),
            (Scalar::Text(t), Cell::Num(x)) => t.trim().parse::<f64>().ok() == Some(*x),
        }
    }
}

impl Criterion {
    pub fn eval(&self, cell: &Cell) -> bool {
        let num = || cell.as_number();
        match self {
            Criterion::Eq(s) => s.matches(cell),
            Criterion::Ne(s) => !cell.is_missing() && !s.matches(cell),
            Criterion::Lt(t) => num().is_some_and(|v| v < *t),
            Criterion::Le(t) => num().is_some_and(|v| v <= *t),
            Criterion::Gt(t) => num().is_some_and(|v| v > *t),
            Criterion::Ge(t) => num().is_some_and(|v| v >= *t),
            Criterion::In(set) => set.iter().any(|s| s.matches(cell)),
        }
    }
}

/// Binarization rule for one sensitive attribute: label 1 iff the criterion holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveSpec {
    pub attribute: String,
    pub positive: Criterion,
}

impl SensitiveSpec {
    pub fn new(attribute: impl Into<String>, positive: Criterion) -> Self {
        Self {
            attribute: attribute.into(),
            positive,
        }
    }
}
