use std::cell::Cell;

use crate::activations::{
    row_transform_into, row_transform_vjp, scalar_gate, scalar_gate_with_grad, sigmoid,
    softmax_into, ActivationFamily, Entmoid15Gate, Gate, SigmoidGate, SparsemoidGate,
};
use crate::error::{GateError, Result};

use super::{finite_checks, Tensor};

/// A differentiable operation on 2-D tensors.
///
/// Elementwise binary ops accept a right operand of equal shape, a `1 x n`
/// row broadcast over the rows of the left operand, or a `1 x 1` scalar.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `(m, k) x (k, n)`
    MatMul,
    /// `a * b^T` for `a: (m, k)`, `b: (n, k)`.
    MatMulTransposed,
    Transpose,
    Add,
    Sub,
    Mul,
    ConcatCols,
    SliceCols { start: usize, end: usize },
    ReduceSum,
    ReduceMean,
    /// Repeats a `1 x n` row `rows` times.
    BroadcastRow { rows: usize },
    Tanh,
    Sigmoid,
    Scale(f64),
    /// Simplex map applied to every row independently.
    RowTransform(ActivationFamily),
    /// Elementwise two-class gate.
    ScalarGate(ActivationFamily),
    /// One level of decision stumps sharing the input `x: (B, m)`.
    ///
    /// Inputs `[x, cut, w_left, w_right]` with the last three `(S, m)`;
    /// output `(B, 2S)` with columns `[o_L(0), o_R(0), o_L(1), ...]` where
    /// `o_L(s) = sum_i w_left[s,i] * gate(x_i)` and
    /// `o_R(s) = sum_i w_right[s,i] * gate(2 x_i - cut[s,i])`.
    StumpLevel(ActivationFamily),
    /// Per-row scaled dot-product self-attention over `trees` blocks of
    /// equal width, with queries, keys and values all equal to the blocks.
    TreeAttention { trees: usize },
    /// Mean binary cross-entropy of `[logits (B,1), targets (B,1)]`.
    BinaryCrossEntropy,
    /// Mean cross-entropy of `[logits (B,K), class indices (B,1)]`.
    SoftmaxCrossEntropy,
}

/// Field-less tag for each [`Primitive`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    MatMulTransposed,
    Transpose,
    Add,
    Sub,
    Mul,
    ConcatCols,
    SliceCols,
    ReduceSum,
    ReduceMean,
    BroadcastRow,
    Tanh,
    Sigmoid,
    Scale,
    RowTransform,
    ScalarGate,
    StumpLevel,
    TreeAttention,
    BinaryCrossEntropy,
    SoftmaxCrossEntropy,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 20] = [
        PrimitiveKind::MatMul,
        PrimitiveKind::MatMulTransposed,
        PrimitiveKind::Transpose,
        PrimitiveKind::Add,
        PrimitiveKind::Sub,
        PrimitiveKind::Mul,
        PrimitiveKind::ConcatCols,
        PrimitiveKind::SliceCols,
        PrimitiveKind::ReduceSum,
        PrimitiveKind::ReduceMean,
        PrimitiveKind::BroadcastRow,
        PrimitiveKind::Tanh,
        PrimitiveKind::Sigmoid,
        PrimitiveKind::Scale,
        PrimitiveKind::RowTransform,
        PrimitiveKind::ScalarGate,
        PrimitiveKind::StumpLevel,
        PrimitiveKind::TreeAttention,
        PrimitiveKind::BinaryCrossEntropy,
        PrimitiveKind::SoftmaxCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::MatMul => "matmul",
            PrimitiveKind::MatMulTransposed => "matmul_transposed",
            PrimitiveKind::Transpose => "transpose",
            PrimitiveKind::Add => "add",
            PrimitiveKind::Sub => "sub",
            PrimitiveKind::Mul => "mul_elementwise",
            PrimitiveKind::ConcatCols => "concat_cols",
            PrimitiveKind::SliceCols => "slice_cols",
            PrimitiveKind::ReduceSum => "reduce_sum",
            PrimitiveKind::ReduceMean => "reduce_mean",
            PrimitiveKind::BroadcastRow => "broadcast_row",
            PrimitiveKind::Tanh => "tanh",
            PrimitiveKind::Sigmoid => "sigmoid",
            PrimitiveKind::Scale => "scale",
            PrimitiveKind::RowTransform => "row_transform",
            PrimitiveKind::ScalarGate => "scalar_gate",
            PrimitiveKind::StumpLevel => "stump_level",
            PrimitiveKind::TreeAttention => "tree_attention",
            PrimitiveKind::BinaryCrossEntropy => "binary_cross_entropy",
            PrimitiveKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }

}

thread_local! {
    static BACKWARD_FAULT: Cell<Option<PrimitiveKind>> = const { Cell::new(None) };
}

/// Test hook: scales the first input gradient of one primitive's backward
/// rule by 1.5 on the calling thread, so gradient checks can be shown to
/// catch a broken rule.
pub fn set_backward_fault(kind: Option<PrimitiveKind>) {
    BACKWARD_FAULT.with(|f| f.set(kind));
}

fn faulty(kind: PrimitiveKind) -> bool {
    BACKWARD_FAULT.with(|f| f.get() == Some(kind))
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> GateError {
    GateError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn invalid(op: &'static str, detail: impl Into<String>) -> GateError {
    GateError::InvalidShape {
        op,
        detail: detail.into(),
    }
}

/// `c = a * b + beta * c` where `a` is `m x k` with strides `(rsa, csa)` and
/// `b` is `k x n` with strides `(rsb, csb)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserted extents bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Ok(Broadcast::Row)
    } else if b.shape() == (1, 1) {
        Ok(Broadcast::Scalar)
    } else {
        Err(mismatch(op, a, b))
    }
}

fn elementwise(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let kind = broadcast_kind(op, a, b)?;
    let mut out = a.clone();
    let cols = a.cols();
    match kind {
        Broadcast::Same => {
            for (o, &y) in out.data_mut().iter_mut().zip(b.data()) {
                *o = f(*o, y);
            }
        }
        Broadcast::Row => {
            for row in out.data_mut().chunks_mut(cols.max(1)) {
                for (o, &y) in row.iter_mut().zip(b.data()) {
                    *o = f(*o, y);
                }
            }
        }
        Broadcast::Scalar => {
            let y = b.data()[0];
            for o in out.data_mut() {
                *o = f(*o, y);
            }
        }
    }
    Ok(out)
}

/// Sums a gradient of `a`'s shape down to the shape of the broadcast operand.
fn reduce_broadcast(g: &Tensor, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Row => {
            let mut out = Tensor::zeros(1, g.cols());
            for r in 0..g.rows() {
                for (o, &v) in out.data_mut().iter_mut().zip(g.row_slice(r)) {
                    *o += v;
                }
            }
            out
        }
        Broadcast::Scalar => Tensor::scalar(g.sum()),
    }
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::MatMul => PrimitiveKind::MatMul,
            Primitive::MatMulTransposed => PrimitiveKind::MatMulTransposed,
            Primitive::Transpose => PrimitiveKind::Transpose,
            Primitive::Add => PrimitiveKind::Add,
            Primitive::Sub => PrimitiveKind::Sub,
            Primitive::Mul => PrimitiveKind::Mul,
            Primitive::ConcatCols => PrimitiveKind::ConcatCols,
            Primitive::SliceCols { .. } => PrimitiveKind::SliceCols,
            Primitive::ReduceSum => PrimitiveKind::ReduceSum,
            Primitive::ReduceMean => PrimitiveKind::ReduceMean,
            Primitive::BroadcastRow { .. } => PrimitiveKind::BroadcastRow,
            Primitive::Tanh => PrimitiveKind::Tanh,
            Primitive::Sigmoid => PrimitiveKind::Sigmoid,
            Primitive::Scale(_) => PrimitiveKind::Scale,
            Primitive::RowTransform(_) => PrimitiveKind::RowTransform,
            Primitive::ScalarGate(_) => PrimitiveKind::ScalarGate,
            Primitive::StumpLevel(_) => PrimitiveKind::StumpLevel,
            Primitive::TreeAttention { .. } => PrimitiveKind::TreeAttention,
            Primitive::BinaryCrossEntropy => PrimitiveKind::BinaryCrossEntropy,
            Primitive::SoftmaxCrossEntropy => PrimitiveKind::SoftmaxCrossEntropy,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::ConcatCols => None,
            Primitive::MatMul
            | Primitive::MatMulTransposed
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::BinaryCrossEntropy
            | Primitive::SoftmaxCrossEntropy => Some(2),
            Primitive::StumpLevel(_) => Some(4),
            _ => Some(1),
        }
    }

    /// Computes the forward value.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let op = self.name();
        match self.arity() {
            Some(n) if inputs.len() != n => {
                return Err(invalid(op, format!("expected {n} inputs, got {}", inputs.len())))
            }
            None if inputs.is_empty() => return Err(invalid(op, "expected at least one input")),
            _ => {}
        }
        if finite_checks() && inputs.iter().any(|t| !t.is_finite()) {
            return Err(GateError::NonFinite { op });
        }

        match self {
            Primitive::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.cols() != b.rows() {
                    return Err(mismatch(op, a, b));
                }
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                let mut out = Tensor::zeros(m, n);
                gemm(m, k, n, a.data(), k, 1, b.data(), n, 1, 0.0, out.data_mut());
                Ok(out)
            }
            Primitive::MatMulTransposed => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.cols() != b.cols() {
                    return Err(mismatch(op, a, b));
                }
                let (m, k, n) = (a.rows(), a.cols(), b.rows());
                let mut out = Tensor::zeros(m, n);
                gemm(m, k, n, a.data(), k, 1, b.data(), 1, k, 0.0, out.data_mut());
                Ok(out)
            }
            Primitive::Transpose => Ok(inputs[0].transpose()),
            Primitive::Add => elementwise(op, inputs[0], inputs[1], |x, y| x + y),
            Primitive::Sub => elementwise(op, inputs[0], inputs[1], |x, y| x - y),
            Primitive::Mul => elementwise(op, inputs[0], inputs[1], |x, y| x * y),
            Primitive::ConcatCols => {
                let rows = inputs[0].rows();
                if let Some(bad) = inputs.iter().find(|t| t.rows() != rows) {
                    return Err(mismatch(op, inputs[0], bad));
                }
                let cols: usize = inputs.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for t in inputs {
                        data.extend_from_slice(t.row_slice(r));
                    }
                }
                Tensor::new(rows, cols, data)
            }
            Primitive::SliceCols { start, end } => {
                let x = inputs[0];
                if start > end || *end > x.cols() {
                    return Err(invalid(
                        op,
                        format!("columns {start}..{end} out of range for {:?}", x.shape()),
                    ));
                }
                let mut data = Vec::with_capacity(x.rows() * (end - start));
                for r in 0..x.rows() {
                    data.extend_from_slice(&x.row_slice(r)[*start..*end]);
                }
                Tensor::new(x.rows(), end - start, data)
            }
            Primitive::ReduceSum => Ok(Tensor::scalar(inputs[0].sum())),
            Primitive::ReduceMean => {
                let x = inputs[0];
                if x.is_empty() {
                    return Err(invalid(op, "mean of an empty tensor"));
                }
                Ok(Tensor::scalar(x.sum() / x.len() as f64))
            }
            Primitive::BroadcastRow { rows } => {
                let x = inputs[0];
                if x.rows() != 1 {
                    return Err(invalid(op, format!("expected a 1 x n row, got {:?}", x.shape())));
                }
                let mut data = Vec::with_capacity(rows * x.cols());
                for _ in 0..*rows {
                    data.extend_from_slice(x.data());
                }
                Tensor::new(*rows, x.cols(), data)
            }
            Primitive::Tanh => Ok(inputs[0].map(f64::tanh)),
            Primitive::Sigmoid => Ok(inputs[0].map(sigmoid)),
            Primitive::Scale(c) => Ok(inputs[0].map(|v| c * v)),
            Primitive::RowTransform(family) => {
                let x = inputs[0];
                let mut out = Tensor::zeros(x.rows(), x.cols());
                if x.cols() > 0 {
                    for r in 0..x.rows() {
                        row_transform_into(*family, x.row_slice(r), out.row_slice_mut(r))?;
                    }
                }
                Ok(out)
            }
            Primitive::ScalarGate(family) => Ok(inputs[0].map(|v| scalar_gate(*family, v))),
            Primitive::StumpLevel(family) => stump_level_forward(*family, inputs),
            Primitive::TreeAttention { trees } => {
                let x = inputs[0];
                let width = attention_width(x, *trees)?;
                let mut out = Tensor::zeros(x.rows(), x.cols());
                let mut scratch = AttentionScratch::new(*trees);
                for r in 0..x.rows() {
                    scratch.forward(x.row_slice(r), *trees, width);
                    attend(&scratch.weights, x.row_slice(r), *trees, width, out.row_slice_mut(r));
                }
                Ok(out)
            }
            Primitive::BinaryCrossEntropy => {
                let (logits, targets) = (inputs[0], inputs[1]);
                if logits.cols() != 1 || logits.shape() != targets.shape() {
                    return Err(mismatch(op, logits, targets));
                }
                let n = logits.rows().max(1) as f64;
                let total: f64 = logits
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&l, &y)| l.max(0.0) - l * y + (-l.abs()).exp().ln_1p())
                    .sum();
                Ok(Tensor::scalar(total / n))
            }
            Primitive::SoftmaxCrossEntropy => {
                let (logits, targets) = (inputs[0], inputs[1]);
                if targets.cols() != 1 || targets.rows() != logits.rows() {
                    return Err(mismatch(op, logits, targets));
                }
                let k = logits.cols();
                let mut total = 0.0;
                for r in 0..logits.rows() {
                    let class = class_index(targets.data()[r], k)?;
                    let row = logits.row_slice(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += lse - row[class];
                }
                Ok(Tensor::scalar(total / logits.rows().max(1) as f64))
            }
        }
    }

    /// Gradients with respect to each input given the upstream gradient
    /// `grad` of `output`. Entries for inputs with `needs[i] == false` may be
    /// `None`.
    pub fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let mut grads = self.backward_inner(inputs, output, grad, needs)?;
        if faulty(self.kind()) {
            if let Some(Some(g)) = grads.first_mut() {
                for v in g.data_mut() {
                    *v *= 1.5;
                }
            }
        }
        Ok(grads)
    }

    fn backward_inner(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let need = |i: usize| needs.get(i).copied().unwrap_or(true);
        Ok(match self {
            Primitive::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                let da = need(0).then(|| {
                    // dA = dC * B^T
                    let mut da = Tensor::zeros(m, k);
                    gemm(m, n, k, grad.data(), n, 1, b.data(), 1, n, 0.0, da.data_mut());
                    da
                });
                let db = need(1).then(|| {
                    // dB = A^T * dC
                    let mut db = Tensor::zeros(k, n);
                    gemm(k, m, n, a.data(), 1, k, grad.data(), n, 1, 0.0, db.data_mut());
                    db
                });
                vec![da, db]
            }
            Primitive::MatMulTransposed => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k, n) = (a.rows(), a.cols(), b.rows());
                let da = need(0).then(|| {
                    // dA = dC * B
                    let mut da = Tensor::zeros(m, k);
                    gemm(m, n, k, grad.data(), n, 1, b.data(), k, 1, 0.0, da.data_mut());
                    da
                });
                let db = need(1).then(|| {
                    // dB = dC^T * A
                    let mut db = Tensor::zeros(n, k);
                    gemm(n, m, k, grad.data(), 1, n, a.data(), k, 1, 0.0, db.data_mut());
                    db
                });
                vec![da, db]
            }
            Primitive::Transpose => vec![Some(grad.transpose())],
            Primitive::Add | Primitive::Sub => {
                let kind = broadcast_kind(self.name(), inputs[0], inputs[1])?;
                let db = need(1).then(|| {
                    let g = reduce_broadcast(grad, kind);
                    if *self == Primitive::Sub {
                        g.map(|v| -v)
                    } else {
                        g
                    }
                });
                vec![Some(grad.clone()), db]
            }
            Primitive::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let kind = broadcast_kind(self.name(), a, b)?;
                let da = need(0)
                    .then(|| elementwise("mul_elementwise", grad, b, |g, y| g * y))
                    .transpose()?;
                let db = need(1)
                    .then(|| -> Result<Tensor> {
                        let mut prod = grad.clone();
                        for (p, &x) in prod.data_mut().iter_mut().zip(a.data()) {
                            *p *= x;
                        }
                        Ok(reduce_broadcast(&prod, kind))
                    })
                    .transpose()?;
                vec![da, db]
            }
            Primitive::ConcatCols => {
                let mut out = Vec::with_capacity(inputs.len());
                let mut offset = 0;
                for (i, t) in inputs.iter().enumerate() {
                    let end = offset + t.cols();
                    if need(i) {
                        let mut g = Tensor::zeros(t.rows(), t.cols());
                        for r in 0..t.rows() {
                            g.row_slice_mut(r).copy_from_slice(&grad.row_slice(r)[offset..end]);
                        }
                        out.push(Some(g));
                    } else {
                        out.push(None);
                    }
                    offset = end;
                }
                out
            }
            Primitive::SliceCols { start, end } => {
                let x = inputs[0];
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    g.row_slice_mut(r)[*start..*end].copy_from_slice(grad.row_slice(r));
                }
                vec![Some(g)]
            }
            Primitive::ReduceSum => {
                let x = inputs[0];
                vec![Some(Tensor::full(x.rows(), x.cols(), grad.data()[0]))]
            }
            Primitive::ReduceMean => {
                let x = inputs[0];
                let v = grad.data()[0] / x.len() as f64;
                vec![Some(Tensor::full(x.rows(), x.cols(), v))]
            }
            Primitive::BroadcastRow { .. } => vec![Some(reduce_broadcast(grad, Broadcast::Row))],
            Primitive::Tanh => {
                let mut g = grad.clone();
                for (g, &y) in g.data_mut().iter_mut().zip(output.data()) {
                    *g *= 1.0 - y * y;
                }
                vec![Some(g)]
            }
            Primitive::Sigmoid => {
                let mut g = grad.clone();
                for (g, &y) in g.data_mut().iter_mut().zip(output.data()) {
                    *g *= y * (1.0 - y);
                }
                vec![Some(g)]
            }
            Primitive::Scale(c) => vec![Some(grad.map(|v| c * v))],
            Primitive::RowTransform(family) => {
                let mut g = Tensor::zeros(output.rows(), output.cols());
                for r in 0..output.rows() {
                    row_transform_vjp(*family, output.row_slice(r), grad.row_slice(r), g.row_slice_mut(r));
                }
                vec![Some(g)]
            }
            Primitive::ScalarGate(family) => {
                let mut g = grad.clone();
                for (g, &x) in g.data_mut().iter_mut().zip(inputs[0].data()) {
                    *g *= scalar_gate_with_grad(*family, x).1;
                }
                vec![Some(g)]
            }
            Primitive::StumpLevel(family) => stump_level_backward(*family, inputs, grad, needs),
            Primitive::TreeAttention { trees } => {
                let x = inputs[0];
                let width = attention_width(x, *trees)?;
                let mut g = Tensor::zeros(x.rows(), x.cols());
                let mut scratch = AttentionScratch::new(*trees);
                for r in 0..x.rows() {
                    scratch.backward(x.row_slice(r), grad.row_slice(r), *trees, width, g.row_slice_mut(r));
                }
                vec![Some(g)]
            }
            Primitive::BinaryCrossEntropy => {
                let (logits, targets) = (inputs[0], inputs[1]);
                let scale = grad.data()[0] / logits.rows().max(1) as f64;
                let mut g = logits.clone();
                for (l, &y) in g.data_mut().iter_mut().zip(targets.data()) {
                    *l = (sigmoid(*l) - y) * scale;
                }
                vec![Some(g), None]
            }
            Primitive::SoftmaxCrossEntropy => {
                let (logits, targets) = (inputs[0], inputs[1]);
                let k = logits.cols();
                let scale = grad.data()[0] / logits.rows().max(1) as f64;
                let mut g = Tensor::zeros(logits.rows(), k);
                for r in 0..logits.rows() {
                    let class = class_index(targets.data()[r], k)?;
                    let row = g.row_slice_mut(r);
                    softmax_into(logits.row_slice(r), row);
                    row[class] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![Some(g), None]
            }
        })
    }
}

pub(crate) fn class_index(value: f64, classes: usize) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && (value as usize) < classes {
        Ok(value as usize)
    } else {
        Err(GateError::InvalidClass { index: value, classes })
    }
}

fn stump_level_forward(family: ActivationFamily, inputs: &[&Tensor]) -> Result<Tensor> {
    let op = "stump_level";
    let (x, cut, wl, wr) = (inputs[0], inputs[1], inputs[2], inputs[3]);
    let m = x.cols();
    if cut.cols() != m {
        return Err(mismatch(op, x, cut));
    }
    for w in [wl, wr] {
        if w.shape() != cut.shape() {
            return Err(mismatch(op, cut, w));
        }
    }
    Ok(match family {
        ActivationFamily::SoftmaxSigmoid => stump_forward_kernel::<SigmoidGate>(x, cut, wl, wr),
        ActivationFamily::Entmax15Entmoid15 => stump_forward_kernel::<Entmoid15Gate>(x, cut, wl, wr),
        ActivationFamily::SparsemaxSparsemoid => stump_forward_kernel::<SparsemoidGate>(x, cut, wl, wr),
    })
}

fn stump_forward_kernel<G: Gate>(x: &Tensor, cut: &Tensor, wl: &Tensor, wr: &Tensor) -> Tensor {
    let (batch, m) = x.shape();
    let stumps = cut.rows();
    let mut out = Tensor::zeros(batch, 2 * stumps);
    let mut left = vec![0.0; m];
    let mut doubled = vec![0.0; m];
    for b in 0..batch {
        let xb = x.row_slice(b);
        for ((l, d), &v) in left.iter_mut().zip(doubled.iter_mut()).zip(xb) {
            *l = G::value(v);
            *d = 2.0 * v;
        }
        let ob = out.row_slice_mut(b);
        for s in 0..stumps {
            let (cs, ls, rs) = (&cut.row_slice(s)[..m], &wl.row_slice(s)[..m], &wr.row_slice(s)[..m]);
            let mut acc_l = 0.0;
            let mut acc_r = 0.0;
            for i in 0..m {
                acc_l += ls[i] * left[i];
                acc_r += rs[i] * G::value(doubled[i] - cs[i]);
            }
            ob[2 * s] = acc_l;
            ob[2 * s + 1] = acc_r;
        }
    }
    out
}

fn stump_level_backward(
    family: ActivationFamily,
    inputs: &[&Tensor],
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    match family {
        ActivationFamily::SoftmaxSigmoid => stump_backward_kernel::<SigmoidGate>(inputs, grad, needs),
        ActivationFamily::Entmax15Entmoid15 => stump_backward_kernel::<Entmoid15Gate>(inputs, grad, needs),
        ActivationFamily::SparsemaxSparsemoid => stump_backward_kernel::<SparsemoidGate>(inputs, grad, needs),
    }
}

fn stump_backward_kernel<G: Gate>(inputs: &[&Tensor], grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let (x, cut, wl, wr) = (inputs[0], inputs[1], inputs[2], inputs[3]);
    let (batch, m) = x.shape();
    let stumps = cut.rows();
    let need_x = needs.first().copied().unwrap_or(true);
    let mut dx = Tensor::zeros(batch, m);
    let mut dcut = Tensor::zeros(stumps, m);
    let mut dwl = Tensor::zeros(stumps, m);
    let mut dwr = Tensor::zeros(stumps, m);
    let mut left = vec![0.0; m];
    let mut left_grad = vec![0.0; m];
    let mut doubled = vec![0.0; m];
    for b in 0..batch {
        let xb = x.row_slice(b);
        for i in 0..m {
            let (g, dg) = G::with_grad(xb[i]);
            left[i] = g;
            left_grad[i] = dg;
            doubled[i] = 2.0 * xb[i];
        }
        let gb = grad.row_slice(b);
        let dxb = dx.row_slice_mut(b);
        for s in 0..stumps {
            let (gl, gr) = (gb[2 * s], gb[2 * s + 1]);
            if gl != 0.0 {
                let ls = &wl.row_slice(s)[..m];
                let dls = &mut dwl.row_slice_mut(s)[..m];
                for i in 0..m {
                    dls[i] += gl * left[i];
                    dxb[i] += gl * ls[i] * left_grad[i];
                }
            }
            if gr != 0.0 {
                let (cs, rs) = (&cut.row_slice(s)[..m], &wr.row_slice(s)[..m]);
                let drs = &mut dwr.row_slice_mut(s)[..m];
                let dcs = &mut dcut.row_slice_mut(s)[..m];
                for i in 0..m {
                    let (g, dg) = G::with_grad(doubled[i] - cs[i]);
                    drs[i] += gr * g;
                    let t = gr * rs[i] * dg;
                    dxb[i] += 2.0 * t;
                    dcs[i] -= t;
                }
            }
        }
    }
    vec![need_x.then_some(dx), Some(dcut), Some(dwl), Some(dwr)]
}

fn attention_width(x: &Tensor, trees: usize) -> Result<usize> {
    if trees == 0 || !x.cols().is_multiple_of(trees) {
        return Err(invalid(
            "tree_attention",
            format!("{} columns do not split into {trees} equal blocks", x.cols()),
        ));
    }
    Ok(x.cols() / trees)
}

/// Row-softmax attention weights `softmax(O O^T / sqrt(width))` for one
/// batch row laid out as `trees` contiguous blocks.
pub(crate) fn attention_weights(row: &[f64], trees: usize, width: usize) -> Vec<f64> {
    let mut scratch = AttentionScratch::new(trees);
    scratch.forward(row, trees, width);
    scratch.weights
}

fn attend(weights: &[f64], row: &[f64], trees: usize, width: usize, out: &mut [f64]) {
    for i in 0..trees {
        let oi = &mut out[i * width..(i + 1) * width];
        oi.fill(0.0);
        for j in 0..trees {
            let a = weights[i * trees + j];
            for (o, &v) in oi.iter_mut().zip(&row[j * width..(j + 1) * width]) {
                *o += a * v;
            }
        }
    }
}

struct AttentionScratch {
    scores: Vec<f64>,
    weights: Vec<f64>,
    dweights: Vec<f64>,
}

impl AttentionScratch {
    fn new(trees: usize) -> Self {
        AttentionScratch {
            scores: vec![0.0; trees * trees],
            weights: vec![0.0; trees * trees],
            dweights: vec![0.0; trees * trees],
        }
    }

    fn forward(&mut self, row: &[f64], trees: usize, width: usize) {
        let scale = 1.0 / (width as f64).sqrt();
        for i in 0..trees {
            let oi = &row[i * width..(i + 1) * width];
            for j in 0..=i {
                let oj = &row[j * width..(j + 1) * width];
                let dot: f64 = oi.iter().zip(oj).map(|(a, b)| a * b).sum::<f64>() * scale;
                self.scores[i * trees + j] = dot;
                self.scores[j * trees + i] = dot;
            }
        }
        for i in 0..trees {
            softmax_into(
                &self.scores[i * trees..(i + 1) * trees],
                &mut self.weights[i * trees..(i + 1) * trees],
            );
        }
    }

    fn backward(&mut self, row: &[f64], grad: &[f64], trees: usize, width: usize, dx: &mut [f64]) {
        self.forward(row, trees, width);
        let scale = 1.0 / (width as f64).sqrt();
        // Through the values: dV_j += sum_i A_ij dOut_i.
        for i in 0..trees {
            let gi = &grad[i * width..(i + 1) * width];
            for j in 0..trees {
                let a = self.weights[i * trees + j];
                let dj = &mut dx[j * width..(j + 1) * width];
                for (d, &g) in dj.iter_mut().zip(gi) {
                    *d += a * g;
                }
                let vj = &row[j * width..(j + 1) * width];
                self.dweights[i * trees + j] = gi.iter().zip(vj).map(|(g, v)| g * v).sum();
            }
        }
        // Softmax backward, reusing `scores` for dS.
        for i in 0..trees {
            let a = &self.weights[i * trees..(i + 1) * trees];
            let da = &self.dweights[i * trees..(i + 1) * trees];
            let dot: f64 = a.iter().zip(da).map(|(a, d)| a * d).sum();
            for j in 0..trees {
                self.scores[i * trees + j] = a[j] * (da[j] - dot) * scale;
            }
        }
        // S = O O^T: dO_i += sum_j (dS_ij + dS_ji) O_j.
        for i in 0..trees {
            for j in 0..trees {
                let c = self.scores[i * trees + j] + self.scores[j * trees + i];
                if c == 0.0 {
                    continue;
                }
                let (vj_start, di_start) = (j * width, i * width);
                for k in 0..width {
                    dx[di_start + k] += c * row[vj_start + k];
                }
            }
        }
    }
}
