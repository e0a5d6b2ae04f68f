//! Differentiable non-linear decision trees.
//!
//! A stump soft-bins every input feature into a left score `h` and a right
//! score `2h - cut`, passes each through the two-class gate independently
//! (the pair is not normalized), multiplies by learnable leaf responses and
//! aggregates the features with a sparse mask. Level `i` of a tree holds
//! `2^(i-1)` stumps that all read `[H, previous level output]`, so a tree of
//! depth `D` emits `2^D` values and never multiplies routing probabilities.
//!
//! Stumps of one level are stored stacked: row `s` of each `S x m` tensor
//! belongs to stump `s`.

use crate::activations::ActivationFamily;
use crate::error::{GateError, Result};
use crate::params::{join, ParamTree};
use crate::rng::{self, GateRng};
use crate::tensor::{Graph, Primitive, Tensor};

pub const MAX_DEPTH: usize = 8;

/// The stumps of one tree level.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeLevel<T = Tensor> {
    pub cutpoints: T,
    pub leaf_left: T,
    pub leaf_right: T,
    pub mask_logits: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeParams<T = Tensor> {
    /// Width of the representation fed to level 1.
    pub input_width: usize,
    pub levels: Vec<TreeLevel<T>>,
}

/// A single stump viewed on its own.
#[derive(Clone, Debug, PartialEq)]
pub struct StumpParams {
    /// `1 x m`
    pub cutpoints: Tensor,
    /// `m x 2`, columns left and right.
    pub leaf_responses: Tensor,
    /// `1 x m`
    pub mask_logits: Tensor,
}

/// Stump count and input width of each level, 1-based level `i` at index
/// `i - 1`.
pub fn level_shapes(input_width: usize, depth: usize) -> Vec<(usize, usize)> {
    (1..=depth)
        .map(|i| {
            let stumps = 1 << (i - 1);
            let width = input_width + if i > 1 { stumps } else { 0 };
            (stumps, width)
        })
        .collect()
}

pub fn init_tree(input_width: usize, depth: usize, rng: &mut GateRng) -> Result<TreeParams> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(GateError::InvalidConfig(vec![format!(
            "tree depth must be in 1..={MAX_DEPTH}, got {depth}"
        )]));
    }
    let levels = level_shapes(input_width, depth)
        .into_iter()
        .map(|(stumps, m)| {
            let leaf_std = 1.0 / (m as f64).sqrt();
            TreeLevel {
                cutpoints: rng::normal(rng, stumps, m, 1.0),
                leaf_left: rng::normal(rng, stumps, m, leaf_std),
                leaf_right: rng::normal(rng, stumps, m, leaf_std),
                mask_logits: rng::beta_mask(rng, stumps, m),
            }
        })
        .collect();
    Ok(TreeParams { input_width, levels })
}

impl<T> TreeParams<T> {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn output_width(&self) -> usize {
        1 << self.levels.len()
    }
}

impl TreeParams {
    /// Stump `s` of 1-based level `level`.
    pub fn stump(&self, level: usize, s: usize) -> StumpParams {
        let l = &self.levels[level - 1];
        let m = l.cutpoints.cols();
        StumpParams {
            cutpoints: Tensor::row(l.cutpoints.row_slice(s)),
            leaf_responses: Tensor::from_fn(m, 2, |i, c| {
                if c == 0 {
                    l.leaf_left.get(s, i)
                } else {
                    l.leaf_right.get(s, i)
                }
            }),
            mask_logits: Tensor::row(l.mask_logits.row_slice(s)),
        }
    }
}

/// Gate values `(g_L, g_R)` for every feature, each `batch x m`.
pub fn soft_bin(h: &Tensor, cutpoints: &Tensor, family: ActivationFamily) -> Result<(Tensor, Tensor)> {
    if cutpoints.shape() != (1, h.cols()) {
        return Err(GateError::ShapeMismatch {
            op: "soft_bin",
            lhs: h.shape(),
            rhs: cutpoints.shape(),
        });
    }
    let left = h.map(|v| crate::activations::scalar_gate(family, v));
    let right = Tensor::from_fn(h.rows(), h.cols(), |r, c| {
        crate::activations::scalar_gate(family, 2.0 * h.get(r, c) - cutpoints.get(0, c))
    });
    Ok((left, right))
}

/// A single stump on `input: batch x m`, returning `batch x 2`.
pub fn stump_forward(input: &Tensor, p: &StumpParams, family: ActivationFamily) -> Result<Tensor> {
    let m = input.cols();
    if p.leaf_responses.shape() != (m, 2) || p.mask_logits.shape() != (1, m) {
        return Err(GateError::ShapeMismatch {
            op: "stump_forward",
            lhs: input.shape(),
            rhs: p.leaf_responses.shape(),
        });
    }
    let (gl, gr) = soft_bin(input, &p.cutpoints, family)?;
    let mask = crate::activations::row_transform(family, p.mask_logits.data())?;
    Ok(Tensor::from_fn(input.rows(), 2, |b, side| {
        let g = if side == 0 { &gl } else { &gr };
        (0..m).map(|i| mask[i] * g.get(b, i) * p.leaf_responses.get(i, side)).sum()
    }))
}

/// Runs one tree on `h`, returning `batch x 2^D`.
pub fn tree_forward<G: Graph>(
    g: &mut G,
    h: &G::Value,
    tree: &TreeParams<G::Value>,
    family: ActivationFamily,
) -> Result<G::Value> {
    if g.value(h).cols() != tree.input_width {
        return Err(GateError::InvalidShape {
            op: "tree_forward",
            detail: format!(
                "representation has {} columns, tree expects {}",
                g.value(h).cols(),
                tree.input_width
            ),
        });
    }
    let mut prev: Option<G::Value> = None;
    for level in &tree.levels {
        let input = match &prev {
            None => h.clone(),
            Some(p) => g.concat_cols(&[h, p])?,
        };
        let mask = g.row_transform(&level.mask_logits, family)?;
        let wl = g.mul(&mask, &level.leaf_left)?;
        let wr = g.mul(&mask, &level.leaf_right)?;
        prev = Some(g.apply(Primitive::StumpLevel(family), &[&input, &level.cutpoints, &wl, &wr])?);
    }
    prev.ok_or_else(|| GateError::InvalidShape {
        op: "tree_forward",
        detail: "tree has no levels".into(),
    })
}

impl<T> ParamTree<T> for TreeLevel<T> {
    type Mapped<U> = TreeLevel<U>;

    fn map_params<U>(&self, f: &mut dyn FnMut(&T) -> U) -> TreeLevel<U> {
        TreeLevel {
            cutpoints: f(&self.cutpoints),
            leaf_left: f(&self.leaf_left),
            leaf_right: f(&self.leaf_right),
            mask_logits: f(&self.mask_logits),
        }
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "cutpoints"), &self.cutpoints);
        f(join(prefix, "leaf_left"), &self.leaf_left);
        f(join(prefix, "leaf_right"), &self.leaf_right);
        f(join(prefix, "mask_logits"), &self.mask_logits);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut T)) {
        f(&mut self.cutpoints);
        f(&mut self.leaf_left);
        f(&mut self.leaf_right);
        f(&mut self.mask_logits);
    }
}

impl<T> ParamTree<T> for TreeParams<T> {
    type Mapped<U> = TreeParams<U>;

    fn map_params<U>(&self, f: &mut dyn FnMut(&T) -> U) -> TreeParams<U> {
        TreeParams {
            input_width: self.input_width,
            levels: self.levels.iter().map(|l| l.map_params(f)).collect(),
        }
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (i, l) in self.levels.iter().enumerate() {
            l.visit_params(&join(prefix, &format!("level{}", i + 1)), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut T)) {
        for l in &mut self.levels {
            l.visit_params_mut(f);
        }
    }
}
