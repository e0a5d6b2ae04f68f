//! Patience-based early stopping on validation loss.

/// Improvements smaller than this do not reset the patience counter.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    /// 1-based epoch of the best loss, 0 before the first update.
    pub best_epoch: usize,
    epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// Keep going; `improved` is true when this epoch set a new best.
    Continue { improved: bool },
    Stop { best_epoch: usize },
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        }
    }

    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        if val_loss < self.best_loss - MIN_IMPROVEMENT || (self.best_epoch == 0 && val_loss.is_finite()) {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            return StopDecision::Continue { improved: true };
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop {
                best_epoch: self.best_epoch,
            }
        } else {
            StopDecision::Continue { improved: false }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(losses: &[f64], patience: usize) -> Option<(usize, usize)> {
        let mut es = EarlyStopping::new(patience);
        for (i, &l) in losses.iter().enumerate() {
            if let StopDecision::Stop { best_epoch } = es.update(l) {
                return Some((i + 1, best_epoch));
            }
        }
        None
    }

    #[test]
    fn decreasing_never_stops() {
        let losses: Vec<f64> = (0..200).map(|i| 1.0 - i as f64 * 1e-3).collect();
        assert_eq!(run(&losses, 1), None);
    }

    #[test]
    fn constant_stops_after_patience() {
        assert_eq!(run(&[0.5; 10], 3), Some((4, 1)));
    }

    #[test]
    fn trace_walkthrough() {
        assert_eq!(run(&[1.0, 0.9, 0.95, 0.94, 0.93], 3), Some((5, 2)));
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        assert_eq!(run(&[1.0, 1.0 - 5e-7, 1.0 - 9e-7], 2), Some((3, 1)));
    }

    #[test]
    fn nan_is_not_an_improvement() {
        assert_eq!(run(&[f64::NAN, 1.0, f64::NAN, f64::NAN], 2), Some((4, 2)));
    }
}
