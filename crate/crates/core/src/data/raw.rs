use std::path::Path;

use super::schema::{validate_schema, Cell, ColumnKind, ColumnSchema};
use crate::error::{Error, Result};

/// Parsed but not yet encoded table. Cells that failed to parse are kept as
/// [`Cell::Missing`] and listed in `parse_failures`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: Vec<ColumnSchema>,
    pub rows: Vec<Vec<Cell>>,
    /// (row, column) of cells that were present but unparseable.
    pub parse_failures: Vec<(usize, usize)>,
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "?" || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

fn parse_cell(kind: ColumnKind, text: &str) -> (Cell, bool) {
    let t = text.trim();
    if is_missing_token(t) {
        return (Cell::Missing, false);
    }
    match kind {
        ColumnKind::Continuous => match t.parse::<f64>() {
            Ok(v) if v.is_finite() => (Cell::Num(v), false),
            _ => (Cell::Missing, true),
        },
        ColumnKind::Categorical | ColumnKind::Binary => (Cell::Cat(t.to_string()), false),
    }
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn missing_cells(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .filter(|c| c.is_missing())
            .count()
    }

    /// Reads CSV text whose header must list exactly the schema's column names
    /// (any order).
    pub fn from_reader<R: std::io::Read>(reader: R, schema: &[ColumnSchema]) -> Result<Self> {
        validate_schema(schema)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() != schema.len() {
            return Err(Error::Schema(format!(
                "header has {} columns, schema has {}",
                header.len(),
                schema.len()
            )));
        }
        // position of each schema column in the file
        let mut positions = Vec::with_capacity(schema.len());
        for col in schema {
            let pos = header
                .iter()
                .position(|h| h.trim() == col.name)
                .ok_or_else(|| Error::Schema(format!("column `{}` not in header", col.name)))?;
            positions.push(pos);
        }

        let mut rows = Vec::new();
        let mut parse_failures = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row_idx = rows.len();
            let mut row = Vec::with_capacity(schema.len());
            for (j, (col, &pos)) in schema.iter().zip(&positions).enumerate() {
                let (cell, failed) = parse_cell(col.kind, record.get(pos).unwrap_or(""));
                if failed {
                    parse_failures.push((row_idx, j));
                }
                row.push(cell);
            }
            rows.push(row);
        }
        Ok(Self {
            schema: schema.to_vec(),
            rows,
            parse_failures,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Loads a CSV file against a declared schema.
pub fn load_csv(path: impl AsRef<Path>, schema: &[ColumnSchema]) -> Result<RawDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    RawDataset::from_reader(std::io::BufReader::new(file), schema)
}
