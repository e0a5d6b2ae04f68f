//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::task::Task;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    /// Classification only.
    pub accuracy: Option<f64>,
    /// Regression only; equals `loss`.
    pub mse: Option<f64>,
}

impl Metrics {
    /// The number tracked per epoch: accuracy or MSE.
    pub fn headline(&self) -> f64 {
        self.accuracy.or(self.mse).unwrap_or(self.loss)
    }
}

/// Predicted class per row. Binary uses `p > 0.5`, so an exact 0.5 goes to
/// the negative class; multiclass takes the first maximal column.
pub fn predicted_classes(task: Task, predictions: &Tensor) -> Vec<usize> {
    match task {
        Task::Binary => predictions.data().iter().map(|&p| usize::from(p > 0.5)).collect(),
        _ => (0..predictions.rows())
            .map(|r| {
                let row = predictions.row_slice(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect(),
    }
}

pub fn accuracy(task: Task, predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    if predictions.rows() != targets.rows() || !task.is_classification() {
        return Err(GateError::ShapeMismatch {
            op: "accuracy",
            lhs: predictions.shape(),
            rhs: targets.shape(),
        });
    }
    if targets.rows() == 0 {
        return Ok(0.0);
    }
    let correct = predicted_classes(task, predictions)
        .iter()
        .zip(targets.data())
        .filter(|(&p, &y)| p as f64 == y)
        .count();
    Ok(correct as f64 / targets.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_threshold() {
        let p = Tensor::column(&[0.5, 0.5000001, 0.1, 0.9]);
        assert_eq!(predicted_classes(Task::Binary, &p), [0, 1, 0, 1]);
        let y = Tensor::column(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(accuracy(Task::Binary, &p, &y).unwrap(), 1.0);
        let y = Tensor::column(&[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(accuracy(Task::Binary, &p, &y).unwrap(), 0.5);
    }

    #[test]
    fn multiclass_argmax() {
        let p = Tensor::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.4, 0.4, 0.2]]).unwrap();
        assert_eq!(predicted_classes(Task::Multiclass(3), &p), [1, 0]);
        assert!(accuracy(Task::Regression, &p, &Tensor::column(&[0.0, 0.0])).is_err());
    }
}
