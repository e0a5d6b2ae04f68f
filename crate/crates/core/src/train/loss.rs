//! Task losses, averaged over the batch.

use crate::error::{GateError, Result};
use crate::task::Task;
use crate::tensor::{class_index, Graph, Primitive, Tensor};

/// Probabilities are kept this far away from 0 and 1 before taking logs.
const PROB_FLOOR: f64 = 1e-15;

fn check_targets(task: Task, rows: usize, targets: &Tensor) -> Result<()> {
    if targets.shape() != (rows, 1) {
        return Err(GateError::ShapeMismatch {
            op: "loss",
            lhs: (rows, task.output_units()),
            rhs: targets.shape(),
        });
    }
    if task.is_classification() {
        for &y in targets.data() {
            class_index(y, task.classes())?;
        }
    }
    Ok(())
}

/// Loss of link-space predictions: binary cross-entropy on probabilities,
/// cross-entropy on class distributions, or mean squared error.
pub fn compute_loss(task: Task, predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    check_targets(task, predictions.rows(), targets)?;
    if predictions.cols() != task.output_units() {
        return Err(GateError::ShapeMismatch {
            op: "loss",
            lhs: predictions.shape(),
            rhs: targets.shape(),
        });
    }
    let n = predictions.rows().max(1) as f64;
    let total: f64 = match task {
        Task::Binary => predictions
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum(),
        Task::Multiclass(_) => (0..predictions.rows())
            .map(|r| -predictions.get(r, targets.get(r, 0) as usize).max(PROB_FLOOR).ln())
            .sum(),
        Task::Regression => predictions
            .data()
            .iter()
            .zip(targets.data())
            .map(|(p, y)| (p - y).powi(2))
            .sum(),
    };
    Ok(total / n)
}

/// The same losses computed from pre-link logits, recorded on `g`.
pub fn loss_from_logits<G: Graph>(g: &mut G, task: Task, logits: &G::Value, targets: &Tensor) -> Result<G::Value> {
    check_targets(task, g.value(logits).rows(), targets)?;
    let y = g.input(targets.clone());
    match task {
        Task::Binary => g.apply(Primitive::BinaryCrossEntropy, &[logits, &y]),
        Task::Multiclass(_) => g.apply(Primitive::SoftmaxCrossEntropy, &[logits, &y]),
        Task::Regression => {
            let diff = g.sub(logits, &y)?;
            let sq = g.mul(&diff, &diff)?;
            g.reduce_mean(&sq)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{sigmoid, softmax_row};
    use crate::rng;
    use crate::tensor::Eager;
    use rand::Rng;

    #[test]
    fn examples() {
        let y = Tensor::column(&[1.0, 2.0, -3.0]);
        assert_eq!(compute_loss(Task::Regression, &y, &y).unwrap(), 0.0);

        let half = Tensor::full(4, 1, 0.5);
        let labels = Tensor::column(&[0.0, 1.0, 1.0, 0.0]);
        let l = compute_loss(Task::Binary, &half, &labels).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_targets() {
        let p = Tensor::full(2, 1, 0.5);
        assert!(compute_loss(Task::Binary, &p, &Tensor::column(&[0.0, 2.0])).is_err());
        assert!(compute_loss(Task::Binary, &p, &Tensor::column(&[0.0, 0.5])).is_err());
        assert!(compute_loss(Task::Binary, &p, &Tensor::column(&[0.0])).is_err());
        let q = Tensor::full(2, 3, 1.0 / 3.0);
        assert!(compute_loss(Task::Multiclass(3), &q, &Tensor::column(&[0.0, 3.0])).is_err());
        assert!(loss_from_logits(&mut Eager, Task::Multiclass(3), &q, &Tensor::column(&[-1.0, 0.0])).is_err());
    }

    /// Scalar-loop references for each task, from logits and from
    /// probabilities.
    #[test]
    fn matches_loop_reference() {
        let mut r = rng::seeded(4);
        let n = 17;
        let logits = rng::normal(&mut r, n, 1, 3.0);
        let bin: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let targets = Tensor::column(&bin);
        let mut want = 0.0;
        for i in 0..n {
            let p = sigmoid(logits.get(i, 0));
            want -= bin[i] * p.ln() + (1.0 - bin[i]) * (1.0 - p).ln();
        }
        want /= n as f64;
        let from_logits = loss_from_logits(&mut Eager, Task::Binary, &logits, &targets).unwrap().item().unwrap();
        let from_probs = compute_loss(Task::Binary, &logits.map(sigmoid), &targets).unwrap();
        assert!((from_logits - want).abs() < 1e-10);
        assert!((from_probs - want).abs() < 1e-10);

        let logits = rng::normal(&mut r, n, 4, 2.0);
        let classes: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..4u8))).collect();
        let targets = Tensor::column(&classes);
        let mut probs = Tensor::zeros(n, 4);
        let mut want = 0.0;
        for i in 0..n {
            let p = softmax_row(logits.row_slice(i));
            want -= p[classes[i] as usize].ln();
            probs.row_slice_mut(i).copy_from_slice(&p);
        }
        want /= n as f64;
        let task = Task::Multiclass(4);
        let from_logits = loss_from_logits(&mut Eager, task, &logits, &targets).unwrap().item().unwrap();
        assert!((from_logits - want).abs() < 1e-10);
        assert!((compute_loss(task, &probs, &targets).unwrap() - want).abs() < 1e-10);

        let pred = rng::normal(&mut r, n, 1, 1.0);
        let target = rng::normal(&mut r, n, 1, 1.0);
        let want = (0..n).map(|i| (pred.get(i, 0) - target.get(i, 0)).powi(2)).sum::<f64>() / n as f64;
        let got = loss_from_logits(&mut Eager, Task::Regression, &pred, &target).unwrap().item().unwrap();
        assert!((got - want).abs() < 1e-10);
        assert!((compute_loss(Task::Regression, &pred, &target).unwrap() - want).abs() < 1e-10);
    }
}
