//! Cosine annealing with warm restarts, stepped once per epoch.

use std::f64::consts::PI;

/// Learning rate for 0-based epoch `step`.
///
/// The first cycle lasts `period` epochs and each later cycle is `mult`
/// times longer than the one before; `mult == 1` gives a fixed period.
pub fn lr_schedule(step: usize, base_lr: f64, period: usize, mult: usize) -> f64 {
    let period = period.max(1);
    let mult = mult.max(1);
    let (mut pos, mut len) = (step, period);
    if mult == 1 {
        pos %= period;
    } else {
        while pos >= len {
            pos -= len;
            len = len.saturating_mul(mult);
        }
    }
    base_lr * 0.5 * (1.0 + (PI * pos as f64 / len as f64).cos())
}
