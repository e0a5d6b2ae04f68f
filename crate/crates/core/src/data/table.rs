//! Typed loading of CSV files against a schema.

use std::path::Path;

use crate::error::{GateError, Result};
use crate::task::Task;

use super::schema::{DatasetSchema, FeatureKind};

/// Columns of a CSV file in schema order, before encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    /// One vector per numeric schema column.
    pub numeric: Vec<Vec<f64>>,
    /// One vector per categorical schema column.
    pub categorical: Vec<Vec<String>>,
    /// Class index or regression value per row.
    pub target: Vec<f64>,
}

impl RawTable {
    pub fn rows(&self) -> usize {
        self.target.len()
    }

    pub fn select(&self, rows: &[usize]) -> RawTable {
        RawTable {
            numeric: self.numeric.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            categorical: self
                .categorical
                .iter()
                .map(|c| rows.iter().map(|&r| c[r].clone()).collect())
                .collect(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
        }
    }
}

pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawTable> {
    load_csv_with(path, schema, true)
}

/// Like [`load_csv`]; with `require_target == false` a missing target column
/// is allowed and every target reads as NaN.
pub fn load_csv_with(path: &Path, schema: &DatasetSchema, require_target: bool) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| GateError::io(path, e))?;
    read_csv_with(file, schema, require_target).map_err(|e| match e {
        GateError::EmptyFile(_) => GateError::EmptyFile(path.to_path_buf()),
        GateError::Data(msg) => GateError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<RawTable> {
    read_csv_with(reader, schema, true)
}

fn read_csv_with<R: std::io::Read>(reader: R, schema: &DatasetSchema, require_target: bool) -> Result<RawTable> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers().map_err(|e| GateError::Data(e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(GateError::EmptyFile(Default::default()));
    }
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| GateError::MissingColumn(name.to_string()))
    };
    let target_col = match position(&schema.target) {
        Ok(i) => Some(i),
        Err(_) if !require_target => None,
        Err(e) => return Err(e),
    };
    let mut numeric_cols = Vec::new();
    let mut categorical_cols = Vec::new();
    for f in &schema.features {
        let idx = position(&f.name)?;
        match f.kind {
            FeatureKind::Numeric => numeric_cols.push((idx, f.name.as_str())),
            FeatureKind::Categorical => categorical_cols.push(idx),
        }
    }

    let mut table = RawTable {
        numeric: vec![Vec::new(); numeric_cols.len()],
        categorical: vec![Vec::new(); categorical_cols.len()],
        target: Vec::new(),
    };
    for (row, record) in csv.records().enumerate() {
        let record = record.map_err(|e| GateError::Data(format!("row {}: {e}", row + 1)))?;
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim();
        for (values, &(idx, name)) in table.numeric.iter_mut().zip(&numeric_cols) {
            let text = cell(idx);
            let v: f64 = text.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| GateError::ParseCell {
                row: row + 1,
                column: name.to_string(),
                value: text.to_string(),
            })?;
            values.push(v);
        }
        for (values, &idx) in table.categorical.iter_mut().zip(&categorical_cols) {
            values.push(cell(idx).to_string());
        }
        table.target.push(match target_col {
            Some(idx) => parse_target(schema, cell(idx), row + 1)?,
            None => f64::NAN,
        });
    }
    if table.target.is_empty() {
        return Err(GateError::EmptyFile(Default::default()));
    }
    Ok(table)
}

fn parse_target(schema: &DatasetSchema, text: &str, row: usize) -> Result<f64> {
    let bad = || GateError::ParseCell {
        row,
        column: schema.target.clone(),
        value: text.to_string(),
    };
    if let Some(labels) = &schema.labels {
        return labels.iter().position(|l| l == text).map(|i| i as f64).ok_or_else(bad);
    }
    let v: f64 = text.parse().map_err(|_| bad())?;
    match schema.task {
        Task::Regression if v.is_finite() => Ok(v),
        Task::Binary | Task::Multiclass(_) if v >= 0.0 && v.fract() == 0.0 && (v as usize) < schema.task.classes() => {
            Ok(v)
        }
        _ => Err(bad()),
    }
}
