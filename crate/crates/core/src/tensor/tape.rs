use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{GateError, Result};

use super::{Primitive, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

struct Node {
    value: Tensor,
    op: Option<(Primitive, Vec<usize>)>,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Nodes are single-assignment and every input index precedes its consumer,
/// so a reverse sweep over the node list is a valid reverse topological order.
/// A tape is single-threaded; use one per thread.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, false)
    }

    fn push(&mut self, value: Tensor, op: Option<(Primitive, Vec<usize>)>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(GateError::NotOnTape(v.index));
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.index].value
    }

    /// Evaluates `primitive` and records it.
    pub fn apply(&mut self, primitive: Primitive, inputs: &[Var]) -> Result<Var> {
        let mut ids = Vec::with_capacity(inputs.len());
        for &v in inputs {
            ids.push(self.check(v)?);
        }
        let value = {
            let values: Vec<&Tensor> = ids.iter().map(|&i| &self.nodes[i].value).collect();
            primitive.forward(&values)?
        };
        let requires_grad = ids.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(value, Some((primitive, ids)), requires_grad))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        let root = self.check(loss)?;
        let shape = self.nodes[root].value.shape();
        if shape != (1, 1) {
            return Err(GateError::NotScalar {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));

        for index in (0..=root).rev() {
            let node = &self.nodes[index];
            let Some((primitive, inputs)) = &node.op else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[index].take() else {
                continue;
            };
            let values: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
            let input_grads = primitive.backward(&values, &node.value, &grad, &needs)?;
            if index == root {
                grads[index] = Some(grad);
            }
            for ((&input, g), &need) in inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else {
                    continue;
                };
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(GradMap {
            tape: self.id,
            grads,
        })
    }

    /// Recomputes every recorded node from the stored leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                None => node.value.clone(),
                Some((primitive, inputs)) => {
                    let args: Vec<&Tensor> = inputs.iter().map(|&i| &values[i]).collect();
                    primitive.forward(&args)?
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }
}

/// Gradients of a scalar with respect to the nodes it depends on.
pub struct GradMap {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl GradMap {
    /// `None` when `v` does not influence the loss. Only leaves and the loss
    /// itself keep their gradients after the sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0));
        let loss = tape.apply(Primitive::ReduceSum, &[x]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones(3, 4));
        assert_eq!(grads.get(loss).unwrap(), &Tensor::scalar(1.0));
    }

    #[test]
    fn tanh_at_zero_has_unit_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 3));
        let t = tape.apply(Primitive::Tanh, &[x]).unwrap();
        let loss = tape.apply(Primitive::ReduceSum, &[t]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones(2, 3));
    }

    #[test]
    fn backward_requires_scalar_on_this_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(2, 2));
        assert!(matches!(tape.backward(x), Err(GateError::NotScalar { .. })));

        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(y), Err(GateError::NotOnTape(_))));
        assert!(tape.apply(Primitive::Tanh, &[y]).is_err());
    }

    #[test]
    fn unreachable_nodes_have_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(1, 2));
        let unused = tape.leaf(Tensor::ones(1, 2));
        let c = tape.constant(Tensor::ones(1, 2));
        let p = tape.apply(Primitive::Mul, &[x, c]).unwrap();
        let loss = tape.apply(Primitive::ReduceSum, &[p]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get_or_zeros(unused, &Tensor::ones(1, 2)), Tensor::zeros(1, 2));
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, -2.0]));
        let sq = tape.apply(Primitive::Mul, &[x, x]).unwrap();
        let loss = tape.apply(Primitive::ReduceSum, &[sq]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
    }
}
