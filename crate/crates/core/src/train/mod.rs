//! Mini-batch training with Adam, cosine warm restarts and early stopping.

mod early_stop;
mod loss;
mod metrics;
mod optim;
mod schedule;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use early_stop::{EarlyStopping, StopDecision, MIN_IMPROVEMENT};
pub use loss::{compute_loss, loss_from_logits};
pub use metrics::{accuracy, predicted_classes, Metrics};
pub use optim::Adam;
pub use schedule::lr_schedule;

use crate::config::TrainConfig;
use crate::data::{batch_iter, Dataset, Preprocessing};
use crate::ensemble::{self, ModelParams};
use crate::error::{GateError, Result};
use crate::params::ParamTree;
use crate::rng;
use crate::task::Task;
use crate::tensor::{Eager, Tape, Tensor};

/// Rows per forward pass when evaluating; bounds peak memory only.
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Accuracy for classification, MSE for regression.
    pub val_metric: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_metric,lr,seconds";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            // `{:?}` prints the shortest representation that parses back to
            // the same f64.
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:.3}",
                r.epoch, r.train_loss, r.val_loss, r.val_metric, r.lr, r.seconds
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| GateError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| GateError::io(path, e))?;
        w.flush().map_err(|e| GateError::io(path, e))
    }

    /// The history with wall-clock times zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> TrainHistory {
        let mut h = self.clone();
        for r in &mut h.records {
            r.seconds = 0.0;
        }
        h
    }
}

/// Loss and gradients (in `params.flatten()` order) for one batch.
pub fn loss_and_grads(params: &ModelParams, x: &Tensor, y: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = params.map_params(&mut |t| tape.leaf(t.clone()));
    let xv = tape.constant(x.clone());
    let f = ensemble::forward(&mut tape, &xv, &vars)?;
    let loss = loss_from_logits(&mut tape, params.spec.task, &f.logits, y)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let out = vars
        .flatten()
        .into_iter()
        .zip(params.flatten())
        .map(|(v, p)| grads.get_or_zeros(*v, p))
        .collect();
    Ok((value, out))
}

/// Predictions for every row, computed in chunks.
pub fn predict_all(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.rows() * params.spec.task.output_units());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + EVAL_CHUNK).min(x.rows());
        let rows: Vec<usize> = (start..end).collect();
        let p = ensemble::predict(params, &x.select_rows(&rows))?;
        data.extend_from_slice(p.data());
        start = end;
    }
    Tensor::new(x.rows(), params.spec.task.output_units(), data)
}

fn logits_all(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.rows() * params.spec.task.output_units());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + EVAL_CHUNK).min(x.rows());
        let rows: Vec<usize> = (start..end).collect();
        let f = ensemble::forward(&mut Eager, &x.select_rows(&rows), params)?;
        data.extend_from_slice(f.logits.data());
        start = end;
    }
    Tensor::new(x.rows(), params.spec.task.output_units(), data)
}

/// Loss and accuracy (classification) or MSE (regression) on `data`.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<Metrics> {
    if data.task != params.spec.task {
        return Err(GateError::Data(format!(
            "dataset task {} does not match model task {}",
            data.task, params.spec.task
        )));
    }
    let logits = logits_all(params, &data.x)?;
    // Loss from logits is exact even where probabilities round to 0 or 1.
    let loss = loss_from_logits(&mut Eager, data.task, &logits, &data.y)?.item()?;
    let predictions = ensemble::link(&mut Eager, data.task, &logits)?;
    Ok(match data.task {
        Task::Regression => Metrics {
            loss,
            accuracy: None,
            mse: Some(loss),
        },
        _ => Metrics {
            loss,
            accuracy: Some(accuracy(data.task, &predictions, &data.y)?),
            mse: None,
        },
    })
}

/// [`evaluate`], refusing data prepared with a different transform.
pub fn evaluate_checked(params: &ModelParams, preprocessing: &Preprocessing, data: &Dataset) -> Result<Metrics> {
    match &data.preprocessing {
        Some(p) if p != preprocessing => Err(GateError::Preprocessing(
            "dataset was transformed with different feature statistics than the model".into(),
        )),
        _ => evaluate(params, data),
    }
}

/// Trains `model` and returns the parameters of the best validation epoch.
pub fn train(model: ModelParams, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with(model, train_set, val_set, config, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    model.check_shapes()?;
    if train_set.is_empty() {
        return Err(GateError::Data("training set is empty".into()));
    }
    if train_set.d() != model.spec.d || val_set.d() != model.spec.d {
        return Err(GateError::Data(format!(
            "model expects {} features, datasets have {} and {}",
            model.spec.d,
            train_set.d(),
            val_set.d()
        )));
    }
    // Without validation rows, early stopping watches the training loss.
    let monitor = if val_set.is_empty() { train_set } else { val_set };

    let mut adam = Adam::new(&model, config.weight_decay);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut shuffle = rng::seeded(config.shuffle_seed);
    let mut best = model.clone();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch - 1, config.base_lr, config.restart_period, config.restart_mult);
        let mut total = 0.0;
        for (b, rows) in batch_iter(train_set.len(), config.batch_size, &mut shuffle).into_iter().enumerate() {
            let wrap = |e: GateError| GateError::Training {
                epoch,
                batch: b + 1,
                source: Box::new(e),
            };
            let x = train_set.x.select_rows(&rows);
            let y = train_set.y.select_rows(&rows);
            let (loss, grads) = loss_and_grads(&model, &x, &y).map_err(wrap)?;
            if !loss.is_finite() {
                return Err(wrap(GateError::NonFinite { op: "loss" }));
            }
            adam.update(&mut model, &grads, lr).map_err(wrap)?;
            total += loss * rows.len() as f64;
        }
        let metrics = evaluate(&model, monitor)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss: metrics.loss,
            val_metric: metrics.headline(),
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.records.push(record);
        match stopper.update(metrics.loss) {
            StopDecision::Continue { improved } => {
                if improved {
                    best = model.clone();
                }
            }
            StopDecision::Stop { .. } => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch;
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::ensemble::init_model;
    use rand::Rng;

    fn random_binary(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng::seeded(seed);
        let x = rng::normal(&mut r, n, d, 1.0);
        let y: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..2u8))).collect();
        Dataset::new(x, Tensor::column(&y), Task::Binary).unwrap()
    }

    fn micro_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: epochs,
            batch_size: 16,
            ..TrainConfig::preset(Preset::Micro)
        }
    }

    #[test]
    fn constant_regression_is_solved_by_t0() {
        let mut r = rng::seeded(1);
        let x = rng::normal(&mut r, 80, 4, 1.0);
        let data = Dataset::new(x, Tensor::full(80, 1, 3.5), Task::Regression).unwrap();
        let (train_set, val_set) = (data.subset(&(0..60).collect::<Vec<_>>()), data.subset(&(60..80).collect::<Vec<_>>()));
        let config = micro_config(50);
        let model = init_model(config.model_spec(4, Task::Regression), train_set.targets(), &mut rng::seeded(2)).unwrap();
        let (model, history) = train(model, &train_set, &val_set, &config).unwrap();
        assert!(history.records.len() <= 50);
        assert!(evaluate(&model, &val_set).unwrap().mse.unwrap() < 1e-3);
    }

    #[test]
    fn overfit_loss_trends_down() {
        let data = random_binary(64, 10, 11);
        let empty = Dataset::new(Tensor::zeros(0, 10), Tensor::zeros(0, 1), Task::Binary).unwrap();
        let config = TrainConfig {
            base_lr: 1e-2,
            patience: 500,
            ..micro_config(500)
        };
        let model = init_model(config.model_spec(10, Task::Binary), &[], &mut rng::seeded(config.init_seed)).unwrap();
        let (_, history) = train(model, &data, &empty, &config).unwrap();
        let losses: Vec<f64> = history.records.iter().map(|r| r.train_loss).collect();
        let smoothed: Vec<f64> = losses.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
        for (i, pair) in smoothed.windows(2).enumerate() {
            assert!(pair[1] <= pair[0], "smoothed loss rises after epoch {}: {} -> {}", i + 10, pair[0], pair[1]);
        }
    }

    #[test]
    fn history_is_reproducible() {
        let data = random_binary(48, 5, 3);
        let config = micro_config(3);
        let run = || {
            let model = init_model(config.model_spec(5, Task::Binary), &[], &mut rng::seeded(config.init_seed)).unwrap();
            let (m, h) = train(model, &data, &data, &config).unwrap();
            (m, h.without_timing())
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.records.len(), 3);
        assert!(h1.records.iter().all(|r| r.lr > 0.0));
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let data = random_binary(40, 4, 5);
        let noise = random_binary(40, 4, 6);
        let config = TrainConfig {
            patience: 2,
            base_lr: 0.05,
            ..micro_config(40)
        };
        let model = init_model(config.model_spec(4, Task::Binary), &[], &mut rng::seeded(7)).unwrap();
        let (best, history) = train(model, &data, &noise, &config).unwrap();
        assert!(history.stopped_early);
        assert!(history.best_epoch < history.records.len());
        let best_val = history.records[history.best_epoch - 1].val_loss;
        assert_eq!(evaluate(&best, &noise).unwrap().loss, best_val);
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                val_metric: 0.75,
                lr: 1e-3,
                seconds: 1.23456,
            }],
            best_epoch: 1,
            stopped_early: false,
        };
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,train_loss,val_loss,val_metric,lr,seconds\n1,0.5,0.25,0.75,0.001,1.235\n"
        );
    }

    #[test]
    fn evaluation_contracts() {
        let data = random_binary(30, 3, 8);
        let model = init_model(micro_config(1).model_spec(3, Task::Binary), &[], &mut rng::seeded(9)).unwrap();
        let m = evaluate(&model, &data).unwrap();
        // eta starts at zero, so every prediction is exactly 0.5 and counts
        // as the negative class.
        let negatives = data.targets().iter().filter(|&&y| y == 0.0).count() as f64 / 30.0;
        assert_eq!(m.accuracy, Some(negatives));
        assert!((m.loss - std::f64::consts::LN_2).abs() < 1e-12);

        let other = Preprocessing {
            feature_names: vec!["z".into()],
            ..Default::default()
        };
        let mut tagged = data.clone();
        tagged.preprocessing = Some(Preprocessing::default());
        assert!(matches!(evaluate_checked(&model, &other, &tagged), Err(GateError::Preprocessing(_))));
        assert!(evaluate_checked(&model, &Preprocessing::default(), &tagged).is_ok());

        let wrong = Dataset::new(Tensor::zeros(2, 3), Tensor::column(&[0.0, 1.0]), Task::Regression).unwrap();
        assert!(evaluate(&model, &wrong).is_err());
    }

    #[test]
    fn errors_carry_epoch_and_batch() {
        let mut data = random_binary(20, 3, 10);
        data.y.set(7, 0, 5.0);
        let config = micro_config(2);
        let model = init_model(config.model_spec(3, Task::Binary), &[], &mut rng::seeded(11)).unwrap();
        let err = train(model, &data, &data, &config).unwrap_err();
        assert!(matches!(err, GateError::Training { epoch: 1, .. }), "{err}");
    }
}
