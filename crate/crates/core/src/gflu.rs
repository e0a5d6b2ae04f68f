//! Gated feature learning units.
//!
//! Each stage softly selects raw features with a simplex-valued mask, then
//! updates the running representation GRU-style:
//!
//! ```text
//! x_n   = mask_n * x
//! [z; r] = sigmoid([h; x_n] G^T)
//! h~    = tanh([r * h; x_n] C^T)
//! h_n   = (1 - z) * h + z * h~
//! ```
//!
//! Stages do not share weights. `h_0` is the raw input, so zero stages is
//! the identity.

use crate::activations::ActivationFamily;
use crate::error::{GateError, Result};
use crate::params::{join, ParamTree};
use crate::rng::{self, GateRng};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GfluStage<T = Tensor> {
    /// `1 x d`
    pub mask_logits: T,
    /// `2d x 2d`; the first `d` output rows produce the update gate, the
    /// next `d` the reset gate.
    pub gate_weights: T,
    /// `d x 2d`
    pub candidate_weights: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GfluStack<T = Tensor> {
    pub d: usize,
    pub stages: Vec<GfluStage<T>>,
}

pub fn init_gflu(d: usize, n_stages: usize, rng: &mut GateRng) -> GfluStack {
    let bound = 1.0 / ((2 * d) as f64).sqrt();
    let stages = (0..n_stages)
        .map(|_| GfluStage {
            mask_logits: rng::beta_mask(rng, 1, d),
            gate_weights: rng::uniform(rng, 2 * d, 2 * d, bound),
            candidate_weights: rng::uniform(rng, d, 2 * d, bound),
        })
        .collect();
    GfluStack { d, stages }
}

/// `mask(logits) * x`, the mask broadcast over rows.
pub fn feature_select<G: Graph>(
    g: &mut G,
    x: &G::Value,
    mask_logits: &G::Value,
    family: ActivationFamily,
) -> Result<G::Value> {
    let mask = g.row_transform(mask_logits, family)?;
    g.mul(x, &mask)
}

pub fn gflu_stage<G: Graph>(
    g: &mut G,
    h_prev: &G::Value,
    x: &G::Value,
    stage: &GfluStage<G::Value>,
    family: ActivationFamily,
) -> Result<G::Value> {
    let d = g.value(h_prev).cols();
    if g.value(x).cols() != d || g.value(&stage.gate_weights).shape() != (2 * d, 2 * d) {
        return Err(GateError::ShapeMismatch {
            op: "gflu_stage",
            lhs: g.value(x).shape(),
            rhs: g.value(&stage.gate_weights).shape(),
        });
    }
    let selected = feature_select(g, x, &stage.mask_logits, family)?;
    let joined = g.concat_cols(&[h_prev, &selected])?;
    let gates = g.matmul_t(&joined, &stage.gate_weights)?;
    let gates = g.sigmoid(&gates)?;
    let update = g.slice_cols(&gates, 0, d)?;
    let reset = g.slice_cols(&gates, d, 2 * d)?;
    let reset_h = g.mul(&reset, h_prev)?;
    let candidate_in = g.concat_cols(&[&reset_h, &selected])?;
    let candidate = g.matmul_t(&candidate_in, &stage.candidate_weights)?;
    let candidate = g.tanh(&candidate)?;
    // (1 - z) h + z h~  ==  h + z (h~ - h)
    let delta = g.sub(&candidate, h_prev)?;
    let step = g.mul(&update, &delta)?;
    g.add(h_prev, &step)
}

pub fn gflu_forward<G: Graph>(
    g: &mut G,
    x: &G::Value,
    stack: &GfluStack<G::Value>,
    family: ActivationFamily,
) -> Result<G::Value> {
    if g.value(x).cols() != stack.d {
        return Err(GateError::InvalidShape {
            op: "gflu_forward",
            detail: format!("input has {} columns, units expect {}", g.value(x).cols(), stack.d),
        });
    }
    let mut h = x.clone();
    for stage in &stack.stages {
        h = gflu_stage(g, &h, x, stage, family)?;
    }
    Ok(h)
}

impl<T> ParamTree<T> for GfluStage<T> {
    type Mapped<U> = GfluStage<U>;

    fn map_params<U>(&self, f: &mut dyn FnMut(&T) -> U) -> GfluStage<U> {
        GfluStage {
            mask_logits: f(&self.mask_logits),
            gate_weights: f(&self.gate_weights),
            candidate_weights: f(&self.candidate_weights),
        }
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "mask_logits"), &self.mask_logits);
        f(join(prefix, "gate_weights"), &self.gate_weights);
        f(join(prefix, "candidate_weights"), &self.candidate_weights);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut T)) {
        f(&mut self.mask_logits);
        f(&mut self.gate_weights);
        f(&mut self.candidate_weights);
    }
}

impl<T> ParamTree<T> for GfluStack<T> {
    type Mapped<U> = GfluStack<U>;

    fn map_params<U>(&self, f: &mut dyn FnMut(&T) -> U) -> GfluStack<U> {
        GfluStack {
            d: self.d,
            stages: self.stages.iter().map(|s| s.map_params(f)).collect(),
        }
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut T)) {
        for s in &mut self.stages {
            s.visit_params_mut(f);
        }
    }
}
