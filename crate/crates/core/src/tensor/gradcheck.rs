use crate::error::{GateError, Result};

use super::Tensor;

/// Norms below this are treated as this value when forming relative errors.
const NORM_FLOOR: f64 = 1e-6;

/// Central-difference gradient of a scalar function:
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every element `i`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    check_eps(eps)?;
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?.item()?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?.item()?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(GateError::InvalidConfig(vec![format!(
            "finite-difference step must be positive, got {eps}"
        )]));
    }
    Ok(())
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Discrepancy {
    /// `|a - n| / max(|a|, |n|, 1e-6)` over the checked coordinates.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Coordinates where the one-sided slopes disagree, i.e. the probe
    /// straddles a kink (sparse support change or gate saturation).
    pub skipped: usize,
}

impl Discrepancy {
    pub fn merge(self, other: Discrepancy) -> Discrepancy {
        Discrepancy {
            rel_error: self.rel_error.max(other.rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

/// Compares `analytic` with central differences of `f` around `x`, skipping
/// coordinates whose forward and backward one-sided slopes disagree by more
/// than a smooth function could at this step size.
pub fn gradient_discrepancy<F>(analytic: &Tensor, mut f: F, x: &Tensor, eps: f64) -> Result<Discrepancy>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    check_eps(eps)?;
    if analytic.shape() != x.shape() {
        return Err(GateError::ShapeMismatch {
            op: "gradient_discrepancy",
            lhs: analytic.shape(),
            rhs: x.shape(),
        });
    }
    let center = f(x)?;
    let mut probe = x.clone();
    let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
    let mut out = Discrepancy::default();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let forward = (plus - center) / eps;
        let backward = (center - minus) / eps;
        if (forward - backward).abs() > 1e-4 + 1e-3 * numeric.abs() {
            out.skipped += 1;
            continue;
        }
        let a = analytic.data()[i];
        out.checked += 1;
        out.max_abs_error = out.max_abs_error.max((a - numeric).abs());
        diff_sq += (a - numeric).powi(2);
        a_sq += a * a;
        n_sq += numeric * numeric;
    }
    out.rel_error = diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(NORM_FLOOR);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_fn(2, 3, |r, c| r as f64 - c as f64 * 0.5);
        let g = finite_difference_gradient(|t| Ok(Tensor::scalar(t.sum())), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn half_squared_norm() {
        let x = Tensor::row(&[1.0, 2.0]);
        let eps = 1e-4;
        let g = finite_difference_gradient(
            |t| Ok(Tensor::scalar(0.5 * t.data().iter().map(|v| v * v).sum::<f64>())),
            &x,
            eps,
        )
        .unwrap();
        assert!((g.data()[0] - 1.0).abs() < 10.0 * eps * eps);
        assert!((g.data()[1] - 2.0).abs() < 10.0 * eps * eps);
    }

    #[test]
    fn rejects_non_scalar_and_bad_step() {
        let x = Tensor::row(&[1.0]);
        assert!(finite_difference_gradient(|t| Ok(t.clone().transpose().map(|v| v)), &Tensor::row(&[1.0, 2.0]), 1e-5).is_err());
        assert!(finite_difference_gradient(|t| Ok(t.clone()), &x, 0.0).is_err());
    }

    #[test]
    fn kinks_are_skipped() {
        // |x| at 0 has no derivative.
        let x = Tensor::row(&[0.0, 1.0]);
        let analytic = Tensor::row(&[0.0, 1.0]);
        let d = gradient_discrepancy(&analytic, |t| Ok(t.data().iter().map(|v| v.abs()).sum()), &x, 1e-5)
            .unwrap();
        assert_eq!(d.skipped, 1);
        assert_eq!(d.checked, 1);
        assert!(d.rel_error < 1e-9);
    }
}
