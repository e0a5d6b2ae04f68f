//! Adam with bias correction and decoupled weight decay.

use crate::error::{GateError, Result};
use crate::params::ParamTree;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// First and second moments in the parameter visiting order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new<P: ParamTree<Tensor>>(params: &P, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params.flatten().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. `grads` follows the order of `params.flatten()`.
    pub fn update<P: ParamTree<Tensor>>(&mut self, params: &mut P, grads: &[Tensor], lr: f64) -> Result<()> {
        let names = params.names();
        if grads.len() != self.m.len() || names.len() != self.m.len() {
            return Err(GateError::InvalidShape {
                op: "adam",
                detail: format!("{} gradients for {} parameters", grads.len(), self.m.len()),
            });
        }
        for (name, (g, m)) in names.iter().zip(grads.iter().zip(&self.m)) {
            if g.shape() != m.shape() {
                return Err(GateError::ShapeMismatch {
                    op: "adam",
                    lhs: m.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(GateError::NanGradient(name.clone()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, decay) = (self.beta1, self.beta2, self.epsilon, lr * self.weight_decay);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_params_mut(&mut |p| {
            let (g, m, v) = (&grads[i], &mut ms[i], &mut vs[i]);
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                if decay != 0.0 {
                    *p -= decay * *p;
                }
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let step = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                if step != 0.0 {
                    *p -= step;
                }
            }
            i += 1;
        });
        Ok(())
    }
}
