//! From CSV files to standardized model inputs.

mod preprocess;
mod schema;
mod split;
mod table;

use std::path::Path;

pub use preprocess::{encode_categoricals, Preprocessing, Standardizer, Vocab, MIN_STD};
pub use schema::{DatasetSchema, FeatureColumn, FeatureKind};
pub use split::{allocate, batch_iter, read_manifest, stratified_split, write_manifest};
pub use table::{load_csv, load_csv_with, read_csv, RawTable};

use crate::error::{GateError, Result};
use crate::task::Task;
use crate::tensor::Tensor;

/// Model-ready rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n x d`
    pub x: Tensor,
    /// `n x 1` class indices or regression targets.
    pub y: Tensor,
    pub task: Task,
    /// The transform that produced `x`, when it came from raw data.
    pub preprocessing: Option<Preprocessing>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Tensor, task: Task) -> Result<Self> {
        if y.shape() != (x.rows(), 1) {
            return Err(GateError::ShapeMismatch {
                op: "dataset",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        Ok(Dataset {
            x,
            y,
            task,
            preprocessing: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn targets(&self) -> &[f64] {
        self.y.data()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            task: self.task,
            preprocessing: self.preprocessing.clone(),
        }
    }

    /// Applies a fitted transform to a raw table.
    pub fn from_table(table: &RawTable, preprocessing: &Preprocessing, task: Task) -> Result<Self> {
        let x = preprocessing.transform(table)?;
        let mut ds = Dataset::new(x, Tensor::column(&table.target), task)?;
        ds.preprocessing = Some(preprocessing.clone());
        Ok(ds)
    }
}

/// Train, validation and test sets sharing one fitted transform.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub preprocessing: Preprocessing,
    /// Row indices into the training file for each split; the test entry is
    /// empty when a separate test file was given.
    pub indices: [Vec<usize>; 3],
}

/// Loads `train_path`, splits it stratified and fits the transform on the
/// training rows. With `test_path`, the file supplies the test set and the
/// training file is split into train and validation only.
pub fn prepare(
    schema: &DatasetSchema,
    train_path: &Path,
    test_path: Option<&Path>,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<PreparedData> {
    let raw = load_csv(train_path, schema)?;
    let test_fraction = if test_path.is_some() { 0.0 } else { test_fraction };
    let fractions = [1.0 - val_fraction - test_fraction, val_fraction, test_fraction];
    let indices = stratified_split(&raw.target, schema.task, fractions, seed)?;
    let fit_rows = raw.select(&indices[0]);
    let numeric: Vec<String> = schema.numeric().map(String::from).collect();
    let categorical: Vec<String> = schema.categorical().map(String::from).collect();
    let preprocessing = Preprocessing::fit(&fit_rows, &numeric, &categorical)?;

    let train = Dataset::from_table(&fit_rows, &preprocessing, schema.task)?;
    let val = Dataset::from_table(&raw.select(&indices[1]), &preprocessing, schema.task)?;
    let test = match test_path {
        Some(path) => Dataset::from_table(&load_csv(path, schema)?, &preprocessing, schema.task)?,
        None => Dataset::from_table(&raw.select(&indices[2]), &preprocessing, schema.task)?,
    };
    Ok(PreparedData {
        train,
        val,
        test,
        preprocessing,
        indices,
    })
}
