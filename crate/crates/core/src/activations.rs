//! Softmax, sparsemax and 1.5-entmax over rows, plus their two-class scalar
//! gates (sigmoid, sparsemoid, 1.5-entmoid).
//!
//! Each family maps scores onto the probability simplex; the sparse members
//! can return exact zeros. Backward rules are written in terms of the forward
//! output so they can be applied without re-solving the forward problem.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};

/// A vector transform paired with its scalar gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationFamily {
    #[serde(alias = "softmax")]
    SoftmaxSigmoid,
    #[default]
    #[serde(alias = "entmax15", alias = "entmax")]
    Entmax15Entmoid15,
    #[serde(alias = "sparsemax")]
    SparsemaxSparsemoid,
}

impl ActivationFamily {
    pub const ALL: [ActivationFamily; 3] = [
        ActivationFamily::SoftmaxSigmoid,
        ActivationFamily::Entmax15Entmoid15,
        ActivationFamily::SparsemaxSparsemoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationFamily::SoftmaxSigmoid => "softmax_sigmoid",
            ActivationFamily::Entmax15Entmoid15 => "entmax15_entmoid15",
            ActivationFamily::SparsemaxSparsemoid => "sparsemax_sparsemoid",
        }
    }
}

impl fmt::Display for ActivationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationFamily {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "softmax_sigmoid" | "softmax" => Ok(ActivationFamily::SoftmaxSigmoid),
            "entmax15_entmoid15" | "entmax15" | "entmax" => Ok(ActivationFamily::Entmax15Entmoid15),
            "sparsemax_sparsemoid" | "sparsemax" => Ok(ActivationFamily::SparsemaxSparsemoid),
            other => Err(GateError::InvalidConfig(vec![format!(
                "activation_family: unknown family `{other}`"
            )])),
        }
    }
}

pub fn softmax_row(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    out
}

pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Euclidean projection of `z` onto the probability simplex.
pub fn sparsemax_row(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    sparsemax_into(z, &mut out);
    out
}

pub(crate) fn sparsemax_into(z: &[f64], out: &mut [f64]) {
    let tau = sparsemax_threshold(z);
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - tau).max(0.0);
    }
}

/// Threshold `tau` with `sum(max(0, z - tau)) == 1`, from a descending sort.
/// Equal scores keep their original order.
fn sparsemax_threshold(z: &[f64]) -> f64 {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support_sum = sorted[0];
    let mut support = 1;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k = k + 1;
        if 1.0 + k as f64 * v > cumsum {
            support = k;
            support_sum = cumsum;
        }
    }
    (support_sum - 1.0) / support as f64
}

/// 1.5-entmax: `p_i = max(0, z_i / 2 - tau)^2` with `sum(p) == 1`.
///
/// `tau` is bracketed by bisection and then solved in closed form on the
/// support the bisection settled on.
pub fn entmax15_row(z: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; z.len()];
    entmax15_into(z, &mut out)?;
    Ok(out)
}

const ENTMAX_TOL: f64 = 1e-9;
const ENTMAX_MAX_ITER: usize = 60;

pub(crate) fn entmax15_into(z: &[f64], out: &mut [f64]) -> Result<()> {
    let half_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) / 2.0;
    let half_min = z.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    let mass = |tau: f64| -> f64 {
        z.iter()
            .map(|&v| {
                let t = (v / 2.0 - tau).max(0.0);
                t * t
            })
            .sum()
    };

    // mass(lo) >= 1 because the largest score alone contributes 1; mass(hi) == 0.
    let mut lo = half_min - 1.0;
    let mut hi = half_max;
    for _ in 0..ENTMAX_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut tau = 0.5 * (lo + hi);

    // Exact threshold for the support {i : z_i / 2 > tau}.
    let (mut k, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &v in z {
        let a = v / 2.0;
        if a > tau {
            k += 1.0;
            s1 += a;
            s2 += a * a;
        }
    }
    if k > 0.0 {
        let disc = s1 * s1 - k * (s2 - 1.0);
        if disc >= 0.0 {
            let exact = (s1 - disc.sqrt()) / k;
            let consistent = z.iter().all(|&v| {
                let a = v / 2.0;
                (a > tau) == (a > exact) || (a - exact).abs() < 1e-12
            });
            if consistent {
                tau = exact;
            }
        }
    }

    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        let t = (v / 2.0 - tau).max(0.0);
        *o = t * t;
        total += *o;
    }
    let residual = (total - 1.0).abs();
    if !(residual <= ENTMAX_TOL) {
        return Err(GateError::NoConvergence { residual });
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(())
}

/// Applies the family's vector transform to one row.
pub fn row_transform(family: ActivationFamily, z: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; z.len()];
    row_transform_into(family, z, &mut out)?;
    Ok(out)
}

pub(crate) fn row_transform_into(family: ActivationFamily, z: &[f64], out: &mut [f64]) -> Result<()> {
    match family {
        ActivationFamily::SoftmaxSigmoid => softmax_into(z, out),
        ActivationFamily::SparsemaxSparsemoid => sparsemax_into(z, out),
        ActivationFamily::Entmax15Entmoid15 => entmax15_into(z, out)?,
    }
    Ok(())
}

/// Vector-Jacobian product of the row transform, from its output `p` and
/// the upstream gradient `g`. Off the support the gradient is zero.
pub fn row_transform_vjp(family: ActivationFamily, p: &[f64], g: &[f64], dz: &mut [f64]) {
    match family {
        ActivationFamily::SoftmaxSigmoid => {
            let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
            for ((d, &p), &g) in dz.iter_mut().zip(p).zip(g) {
                *d = p * (g - dot);
            }
        }
        ActivationFamily::SparsemaxSparsemoid => {
            let (mut n, mut sum) = (0.0, 0.0);
            for (&p, &g) in p.iter().zip(g) {
                if p > 0.0 {
                    n += 1.0;
                    sum += g;
                }
            }
            let mean = sum / n;
            for ((d, &p), &g) in dz.iter_mut().zip(p).zip(g) {
                *d = if p > 0.0 { g - mean } else { 0.0 };
            }
        }
        ActivationFamily::Entmax15Entmoid15 => {
            let (mut s_sum, mut sg) = (0.0, 0.0);
            for (&p, &g) in p.iter().zip(g) {
                let s = p.sqrt();
                s_sum += s;
                sg += s * g;
            }
            let q = sg / s_sum;
            for ((d, &p), &g) in dz.iter_mut().zip(p).zip(g) {
                let s = p.sqrt();
                *d = s * (g - q);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-class 1.5-entmax, `entmax15([x, 0])[0]`, in closed form.
#[inline]
pub fn entmoid15(x: f64) -> f64 {
    entmoid15_with_grad(x).0
}

#[inline]
fn entmoid15_with_grad(x: f64) -> (f64, f64) {
    let s = x.abs().min(2.0);
    let root = (8.0 - s * s).sqrt();
    let u = root - s;
    // (root - s)^2 == 8 - 2 s root; the expanded form is exact at 0, the
    // squared form keeps relative precision near saturation.
    let tail = if s < 1.0 { 0.5 - s * root / 8.0 } else { u * u / 16.0 };
    let grad = u * (1.0 + s / root) / 8.0;
    let value = if x >= 0.0 { 1.0 - tail } else { tail };
    (value, if x.abs() >= 2.0 { 0.0 } else { grad })
}

/// Two-class sparsemax, `clamp(x / 2 + 1/2, 0, 1)`.
#[inline]
pub fn sparsemoid(x: f64) -> f64 {
    (0.5 * x + 0.5).clamp(0.0, 1.0)
}

/// A scalar gate as a type, so hot loops can be specialized per family.
pub(crate) trait Gate {
    fn value(x: f64) -> f64;
    fn with_grad(x: f64) -> (f64, f64);
}

pub(crate) struct SigmoidGate;
pub(crate) struct Entmoid15Gate;
pub(crate) struct SparsemoidGate;

impl Gate for SigmoidGate {
    #[inline(always)]
    fn value(x: f64) -> f64 {
        sigmoid(x)
    }

    #[inline(always)]
    fn with_grad(x: f64) -> (f64, f64) {
        let s = sigmoid(x);
        (s, s * (1.0 - s))
    }
}

impl Gate for Entmoid15Gate {
    #[inline(always)]
    fn value(x: f64) -> f64 {
        entmoid15_with_grad(x).0
    }

    #[inline(always)]
    fn with_grad(x: f64) -> (f64, f64) {
        entmoid15_with_grad(x)
    }
}

impl Gate for SparsemoidGate {
    #[inline(always)]
    fn value(x: f64) -> f64 {
        sparsemoid(x)
    }

    #[inline(always)]
    fn with_grad(x: f64) -> (f64, f64) {
        let v = 0.5 * x + 0.5;
        if v <= 0.0 {
            (0.0, 0.0)
        } else if v >= 1.0 {
            (1.0, 0.0)
        } else {
            (v, 0.5)
        }
    }
}

/// The family's scalar gate: `P(first of two classes)` for scores `[x, 0]`.
#[inline]
pub fn scalar_gate(family: ActivationFamily, x: f64) -> f64 {
    match family {
        ActivationFamily::SoftmaxSigmoid => SigmoidGate::value(x),
        ActivationFamily::Entmax15Entmoid15 => Entmoid15Gate::value(x),
        ActivationFamily::SparsemaxSparsemoid => SparsemoidGate::value(x),
    }
}

/// Gate value and its derivative. At a saturation boundary the derivative
/// of the saturated side is used.
#[inline]
pub fn scalar_gate_with_grad(family: ActivationFamily, x: f64) -> (f64, f64) {
    match family {
        ActivationFamily::SoftmaxSigmoid => SigmoidGate::with_grad(x),
        ActivationFamily::Entmax15Entmoid15 => Entmoid15Gate::with_grad(x),
        ActivationFamily::SparsemaxSparsemoid => SparsemoidGate::with_grad(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn softmax_examples() {
        for p in softmax_row(&[2.5, 2.5, 2.5]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax_row(&[0.0]), vec![1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_vec(&mut rng, 8, 4.0);
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for (p, v) in softmax_row(&z).iter().zip(&z) {
            assert!((p - v.exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn sparsemax_examples() {
        assert_eq!(sparsemax_row(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(sparsemax_row(&[0.3, 0.3]), vec![0.5, 0.5]);
        // ties resolved deterministically
        let p = sparsemax_row(&[1.0, 1.0, -5.0]);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn entmax_examples() {
        assert_eq!(entmax15_row(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = entmax15_row(&[10.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        let p = entmax15_row(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn gate_examples() {
        for f in ActivationFamily::ALL {
            assert!((scalar_gate(f, 0.0) - 0.5).abs() < 1e-15, "{f}");
        }
        assert_eq!(sparsemoid(3.0), 1.0);
        let vector = entmax15_row(&[1.5, 0.0]).unwrap()[0];
        assert!((entmoid15(1.5) - vector).abs() < 1e-12);
    }

    #[test]
    fn gates_match_vector_forms() {
        for i in -60..=60 {
            let x = i as f64 * 0.07;
            let e = entmax15_row(&[x, 0.0]).unwrap()[0];
            let s = sparsemax_row(&[x, 0.0])[0];
            let m = softmax_row(&[x, 0.0])[0];
            assert!((entmoid15(x) - e).abs() < 1e-12, "entmoid at {x}");
            assert!((sparsemoid(x) - s).abs() < 1e-12, "sparsemoid at {x}");
            assert!((sigmoid(x) - m).abs() < 1e-12, "sigmoid at {x}");
        }
    }

    #[test]
    fn gate_derivatives_match_differences() {
        let h = 1e-6;
        for f in ActivationFamily::ALL {
            for i in -50..=50 {
                let x = i as f64 * 0.083 + 0.0123;
                if f == ActivationFamily::SparsemaxSparsemoid && ((x.abs() - 1.0).abs() < 2.0 * h) {
                    continue;
                }
                let fd = (scalar_gate(f, x + h) - scalar_gate(f, x - h)) / (2.0 * h);
                let (_, g) = scalar_gate_with_grad(f, x);
                assert!((fd - g).abs() < 1e-7, "{f} at {x}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn rejects_unknown_family() {
        assert!("entmax15".parse::<ActivationFamily>().is_ok());
        assert!("relu".parse::<ActivationFamily>().is_err());
    }
}
