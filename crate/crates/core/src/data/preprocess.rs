//! One-hot encoding and standardization, fit on the training split only.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::tensor::Tensor;

use super::table::RawTable;

/// Columns whose spread is below this are centered but not scaled.
pub const MIN_STD: f64 = 1e-12;

/// Sorted category list per categorical column.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub columns: Vec<Vec<String>>,
}

impl Vocab {
    pub fn fit(table: &RawTable) -> Self {
        Vocab {
            columns: table
                .categorical
                .iter()
                .map(|c| c.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect())
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}

/// Numeric columns first, then one indicator per known category. An unseen
/// category encodes as all zeros.
pub fn encode_categoricals(table: &RawTable, vocab: Option<&Vocab>) -> Result<(Tensor, Vocab)> {
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocab::fit(table),
    };
    if vocab.columns.len() != table.categorical.len() {
        return Err(GateError::Preprocessing(format!(
            "vocabulary covers {} categorical columns, table has {}",
            vocab.columns.len(),
            table.categorical.len()
        )));
    }
    let n = table.rows();
    let d = table.numeric.len() + vocab.width();
    let mut x = Tensor::zeros(n, d);
    for (c, col) in table.numeric.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            x.set(r, c, v);
        }
    }
    let mut offset = table.numeric.len();
    for (col, cats) in table.categorical.iter().zip(&vocab.columns) {
        for (r, v) in col.iter().enumerate() {
            if let Ok(k) = cats.binary_search(v) {
                x.set(r, offset + k, 1.0);
            }
        }
        offset += cats.len();
    }
    Ok((x, vocab))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column statistics of the first `cols` columns of `x`.
    pub fn fit(x: &Tensor, cols: usize) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; cols];
        let mut std = vec![0.0; cols];
        for c in 0..cols {
            let m = (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / n;
            let var = (0..x.rows()).map(|r| (x.get(r, c) - m).powi(2)).sum::<f64>() / n;
            mean[c] = m;
            std[c] = var.sqrt();
        }
        Standardizer { mean, std }
    }

    /// `(x - mean) / std` on the leading columns; columns beyond the stored
    /// statistics pass through.
    pub fn transform(&self, x: &mut Tensor) -> Result<()> {
        if self.mean.len() > x.cols() || self.std.len() != self.mean.len() {
            return Err(GateError::Preprocessing(format!(
                "statistics for {} columns, data has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        for r in 0..x.rows() {
            let row = x.row_slice_mut(r);
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v -= m;
                if s >= MIN_STD {
                    *v /= s;
                }
            }
        }
        Ok(())
    }
}

/// Everything needed to turn a raw table into model inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub feature_names: Vec<String>,
    pub vocab: Vocab,
    pub standardizer: Standardizer,
}

impl Preprocessing {
    pub fn fit(table: &RawTable, numeric_names: &[String], categorical_names: &[String]) -> Result<Self> {
        let (x, vocab) = encode_categoricals(table, None)?;
        let standardizer = Standardizer::fit(&x, table.numeric.len());
        let mut feature_names = numeric_names.to_vec();
        for (name, cats) in categorical_names.iter().zip(&vocab.columns) {
            feature_names.extend(cats.iter().map(|c| format!("{name}={c}")));
        }
        Ok(Preprocessing {
            feature_names,
            vocab,
            standardizer,
        })
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn transform(&self, table: &RawTable) -> Result<Tensor> {
        if table.numeric.len() != self.standardizer.mean.len() {
            return Err(GateError::Preprocessing(format!(
                "statistics for {} numeric columns, table has {}",
                self.standardizer.mean.len(),
                table.numeric.len()
            )));
        }
        let (mut x, _) = encode_categoricals(table, Some(&self.vocab))?;
        self.standardizer.transform(&mut x)?;
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(numeric: Vec<Vec<f64>>, categorical: Vec<Vec<&str>>) -> RawTable {
        let rows = numeric.first().map(Vec::len).or(categorical.first().map(Vec::len)).unwrap_or(0);
        RawTable {
            numeric,
            categorical: categorical
                .into_iter()
                .map(|c| c.into_iter().map(String::from).collect())
                .collect(),
            target: vec![0.0; rows],
        }
    }

    #[test]
    fn one_hot() {
        let t = table(vec![], vec![vec!["a", "b", "c", "b"]]);
        let (x, vocab) = encode_categoricals(&t, None).unwrap();
        assert_eq!(x.shape(), (4, 3));
        assert_eq!(x.row_slice(1), [0.0, 1.0, 0.0]);

        let unseen = table(vec![], vec![vec!["d"]]);
        let (x, _) = encode_categoricals(&unseen, Some(&vocab)).unwrap();
        assert_eq!(x.row_slice(0), [0.0, 0.0, 0.0]);

        let numeric = table(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![]);
        let (x, _) = encode_categoricals(&numeric, None).unwrap();
        assert_eq!(x, Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap());

        assert!(encode_categoricals(&numeric, Some(&vocab)).is_err());
    }

    #[test]
    fn standardize_examples() {
        let mut x = Tensor::column(&[0.0, 2.0]);
        let s = Standardizer::fit(&x, 1);
        assert_eq!((s.mean[0], s.std[0]), (1.0, 1.0));
        s.transform(&mut x).unwrap();
        assert_eq!(x.data(), [-1.0, 1.0]);

        let mut c = Tensor::column(&[3.0, 3.0, 3.0]);
        let s = Standardizer::fit(&c, 1);
        s.transform(&mut c).unwrap();
        assert_eq!(c.data(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn stored_statistics_apply_to_new_rows() {
        let train = table(vec![vec![1.0, 2.0, 6.0], vec![-1.0, 0.0, 1.0]], vec![vec!["x", "y", "x"]]);
        let p = Preprocessing::fit(&train, &["u".into(), "v".into()], &["k".into()]).unwrap();
        assert_eq!(p.feature_names, ["u", "v", "k=x", "k=y"]);
        let fitted = p.clone();

        let fresh = table(vec![vec![4.0], vec![10.0]], vec![vec!["z"]]);
        let x = p.transform(&fresh).unwrap();
        assert_eq!(p, fitted);
        let (mu, mv) = (3.0, 0.0);
        let su = ((4.0 + 1.0 + 9.0) / 3.0f64).sqrt();
        let sv = (2.0 / 3.0f64).sqrt();
        assert!((x.get(0, 0) - (4.0 - mu) / su).abs() < 1e-15);
        assert!((x.get(0, 1) - (10.0 - mv) / sv).abs() < 1e-15);
        assert_eq!(&x.row_slice(0)[2..], [0.0, 0.0]);

        let z = p.transform(&train).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..3).map(|r| z.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 3.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-6 && (var.sqrt() - 1.0).abs() < 1e-3);
        }
    }
}
