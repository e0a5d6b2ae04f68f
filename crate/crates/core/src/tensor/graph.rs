use crate::activations::ActivationFamily;
use crate::error::Result;

use super::{Primitive, Tape, Tensor, Var};

/// Something forward code can be evaluated on: either eagerly, or on a tape.
pub trait Graph {
    type Value: Clone;

    /// A value that never needs a gradient (data, targets).
    fn input(&mut self, value: Tensor) -> Self::Value;

    /// A learnable parameter.
    fn param(&mut self, value: &Tensor) -> Self::Value;

    fn apply(&mut self, primitive: Primitive, inputs: &[&Self::Value]) -> Result<Self::Value>;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    /// `a * b^T`
    fn matmul_t(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::MatMulTransposed, &[a, b])
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::Mul, &[a, b])
    }

    fn concat_cols(&mut self, parts: &[&Self::Value]) -> Result<Self::Value> {
        self.apply(Primitive::ConcatCols, parts)
    }

    fn slice_cols(&mut self, x: &Self::Value, start: usize, end: usize) -> Result<Self::Value> {
        self.apply(Primitive::SliceCols { start, end }, &[x])
    }

    fn reduce_sum(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::ReduceSum, &[x])
    }

    fn reduce_mean(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::ReduceMean, &[x])
    }

    fn tanh(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::Tanh, &[x])
    }

    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Primitive::Sigmoid, &[x])
    }

    fn scale(&mut self, x: &Self::Value, c: f64) -> Result<Self::Value> {
        self.apply(Primitive::Scale(c), &[x])
    }

    fn row_transform(&mut self, x: &Self::Value, family: ActivationFamily) -> Result<Self::Value> {
        self.apply(Primitive::RowTransform(family), &[x])
    }

    fn gate(&mut self, x: &Self::Value, family: ActivationFamily) -> Result<Self::Value> {
        self.apply(Primitive::ScalarGate(family), &[x])
    }
}

/// Tape-free evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Graph for Eager {
    type Value = Tensor;

    fn input(&mut self, value: Tensor) -> Tensor {
        value
    }

    fn param(&mut self, value: &Tensor) -> Tensor {
        value.clone()
    }

    fn apply(&mut self, primitive: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        primitive.forward(inputs)
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
}

impl Graph for Tape {
    type Value = Var;

    fn input(&mut self, value: Tensor) -> Var {
        self.constant(value)
    }

    fn param(&mut self, value: &Tensor) -> Var {
        self.leaf(value.clone())
    }

    fn apply(&mut self, primitive: Primitive, inputs: &[&Var]) -> Result<Var> {
        let vars: Vec<Var> = inputs.iter().map(|v| **v).collect();
        Tape::apply(self, primitive, &vars)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        Tape::value(self, *v)
    }
}
