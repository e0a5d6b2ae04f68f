//! The full model: feature units, a tree ensemble, attention over tree
//! outputs, per-tree linear heads and a learnable additive mix.
//!
//! ```text
//! H    = gflu(X)
//! O_i  = tree_i(H)                 parallel
//! O_i  = tree_i([H, O_{i-1}])      chained, O_0 = 0
//! O~   = softmax(O O^T / sqrt(L)) O   per batch row, O stacked T x L
//! y_i  = O~_i W_i + b_i
//! out  = link(sum_i eta_i y_i + t0)
//! ```
//!
//! With depth 0 the trees are bypassed and a single head reads `H`.

use serde::{Deserialize, Serialize};

use crate::activations::ActivationFamily;
use crate::dndt::{self, TreeParams, MAX_DEPTH};
use crate::error::{GateError, Result};
use crate::gflu::{self, GfluStack};
use crate::params::{join, ParamTree};
use crate::rng::{self, GateRng};
use crate::task::Task;
use crate::tensor::{attention_weights, Eager, Graph, Primitive, Tensor};

/// Architecture of a model, independent of its parameter values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input width after encoding.
    pub d: usize,
    pub n_stages: usize,
    pub n_trees: usize,
    pub depth: usize,
    pub chained: bool,
    pub attention: bool,
    pub task: Task,
    pub family: ActivationFamily,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d == 0 {
            problems.push("d: input width must be at least 1".to_string());
        }
        if self.depth > MAX_DEPTH {
            problems.push(format!("tree_depth: must be at most {MAX_DEPTH}, got {}", self.depth));
        }
        if self.depth > 0 && self.n_trees == 0 {
            problems.push("n_trees: must be at least 1 when tree_depth > 0".to_string());
        }
        if let Task::Multiclass(k) = self.task {
            if k < 2 {
                problems.push(format!("task: multiclass needs at least 2 classes, got {k}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GateError::InvalidConfig(problems))
        }
    }

    pub fn uses_trees(&self) -> bool {
        self.depth > 0
    }

    /// Width each head reads: `2^D`, or `d` when trees are bypassed.
    pub fn head_width(&self) -> usize {
        if self.uses_trees() {
            1 << self.depth
        } else {
            self.d
        }
    }

    pub fn n_heads(&self) -> usize {
        if self.uses_trees() {
            self.n_trees
        } else {
            1
        }
    }

    /// Width of the level-1 input of every tree.
    pub fn tree_input_width(&self) -> usize {
        if self.chained {
            self.d + self.head_width()
        } else {
            self.d
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<T = Tensor> {
    /// `L x units`
    pub weight: T,
    /// `1 x units`
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub spec: ModelSpec,
    pub gflu: GfluStack<T>,
    pub trees: Vec<TreeParams<T>>,
    pub heads: Vec<Head<T>>,
    /// `1 x n_heads`
    pub eta: T,
    /// `1 x units`, regression only.
    pub t0: Option<T>,
}

/// Everything computed on the way to a prediction, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub h: Tensor,
    pub tree_outputs: Vec<Tensor>,
    /// One `T x T` matrix per batch row; empty when attention is off or the
    /// trees are bypassed.
    pub attention_weights: Vec<Tensor>,
    pub per_tree_preds: Vec<Tensor>,
    pub logits: Tensor,
    pub prediction: Tensor,
}

/// Graph values of one forward pass.
pub struct Forward<V> {
    pub h: V,
    pub tree_outputs: Vec<V>,
    pub per_tree_preds: Vec<V>,
    /// Pre-link output: probabilities come from `sigmoid`/`softmax` of this.
    pub logits: V,
}

pub fn init_model(spec: ModelSpec, labels: &[f64], rng: &mut GateRng) -> Result<ModelParams> {
    spec.validate()?;
    let gflu = gflu::init_gflu(spec.d, spec.n_stages, rng);
    let trees = if spec.uses_trees() {
        (0..spec.n_trees)
            .map(|_| dndt::init_tree(spec.tree_input_width(), spec.depth, rng))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let units = spec.task.output_units();
    let width = spec.head_width();
    let bound = 1.0 / (width as f64).sqrt();
    let heads = (0..spec.n_heads())
        .map(|_| Head {
            weight: rng::uniform(rng, width, units, bound),
            bias: rng::uniform(rng, 1, units, bound),
        })
        .collect();
    let t0 = match spec.task {
        Task::Regression => {
            let mean = if labels.is_empty() {
                0.0
            } else {
                labels.iter().sum::<f64>() / labels.len() as f64
            };
            Some(Tensor::full(1, units, mean))
        }
        _ => None,
    };
    Ok(ModelParams {
        spec,
        gflu,
        trees,
        heads,
        eta: Tensor::zeros(1, spec.n_heads()),
        t0,
    })
}

impl ModelParams {
    /// Checks that every tensor has the shape the spec implies.
    pub fn check_shapes(&self) -> Result<()> {
        let s = &self.spec;
        s.validate()?;
        let reference = expected_shapes(s);
        let actual: Vec<(String, (usize, usize))> = {
            let mut out = Vec::new();
            self.visit_params("", &mut |n, t| out.push((n, t.shape())));
            out
        };
        if reference != actual {
            let detail = reference
                .iter()
                .zip(&actual)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{} should be {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("expected {} tensors, found {}", reference.len(), actual.len()));
            return Err(GateError::InvalidShape {
                op: "model_params",
                detail,
            });
        }
        Ok(())
    }
}

/// Names and shapes of every parameter a spec implies, in visiting order.
pub fn expected_shapes(spec: &ModelSpec) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let d = spec.d;
    for i in 0..spec.n_stages {
        let p = format!("gflu.stage{i}");
        out.push((format!("{p}.mask_logits"), (1, d)));
        out.push((format!("{p}.gate_weights"), (2 * d, 2 * d)));
        out.push((format!("{p}.candidate_weights"), (d, 2 * d)));
    }
    if spec.uses_trees() {
        for t in 0..spec.n_trees {
            for (l, (stumps, m)) in dndt::level_shapes(spec.tree_input_width(), spec.depth).into_iter().enumerate() {
                for field in ["cutpoints", "leaf_left", "leaf_right", "mask_logits"] {
                    out.push((format!("tree{t}.level{}.{field}", l + 1), (stumps, m)));
                }
            }
        }
    }
    let units = spec.task.output_units();
    for h in 0..spec.n_heads() {
        out.push((format!("head{h}.weight"), (spec.head_width(), units)));
        out.push((format!("head{h}.bias"), (1, units)));
    }
    out.push(("eta".into(), (1, spec.n_heads())));
    if spec.task == Task::Regression {
        out.push(("t0".into(), (1, units)));
    }
    out
}

/// Runs the model on `x` and returns the graph values up to the logits.
pub fn forward<G: Graph>(g: &mut G, x: &G::Value, p: &ModelParams<G::Value>) -> Result<Forward<G::Value>> {
    let spec = &p.spec;
    let batch = g.value(x).rows();
    if g.value(x).cols() != spec.d {
        return Err(GateError::InvalidShape {
            op: "model_forward",
            detail: format!("input has {} columns, model expects {}", g.value(x).cols(), spec.d),
        });
    }
    let h = gflu::gflu_forward(g, x, &p.gflu, spec.family)?;

    let mut tree_outputs: Vec<G::Value> = Vec::with_capacity(p.trees.len());
    let head_inputs: Vec<G::Value> = if spec.uses_trees() {
        let width = spec.head_width();
        for tree in &p.trees {
            let input = if spec.chained {
                let prev = match tree_outputs.last() {
                    Some(o) => o.clone(),
                    None => g.input(Tensor::zeros(batch, width)),
                };
                g.concat_cols(&[&h, &prev])?
            } else {
                h.clone()
            };
            tree_outputs.push(dndt::tree_forward(g, &input, tree, spec.family)?);
        }
        if spec.attention {
            let refs: Vec<&G::Value> = tree_outputs.iter().collect();
            let stacked = g.concat_cols(&refs)?;
            let attended = g.apply(
                Primitive::TreeAttention {
                    trees: tree_outputs.len(),
                },
                &[&stacked],
            )?;
            (0..tree_outputs.len())
                .map(|i| g.slice_cols(&attended, i * width, (i + 1) * width))
                .collect::<Result<_>>()?
        } else {
            tree_outputs.clone()
        }
    } else {
        vec![h.clone()]
    };

    if head_inputs.len() != p.heads.len() {
        return Err(GateError::InvalidShape {
            op: "model_forward",
            detail: format!("{} head inputs for {} heads", head_inputs.len(), p.heads.len()),
        });
    }
    let mut per_tree_preds = Vec::with_capacity(p.heads.len());
    let mut logits: Option<G::Value> = None;
    for (i, (input, head)) in head_inputs.iter().zip(&p.heads).enumerate() {
        let y = g.matmul(input, &head.weight)?;
        let y = g.add(&y, &head.bias)?;
        let eta_i = g.slice_cols(&p.eta, i, i + 1)?;
        let term = g.mul(&y, &eta_i)?;
        per_tree_preds.push(y);
        logits = Some(match logits {
            None => term,
            Some(acc) => g.add(&acc, &term)?,
        });
    }
    let mut logits = logits.ok_or_else(|| GateError::InvalidShape {
        op: "model_forward",
        detail: "model has no heads".into(),
    })?;
    if let Some(t0) = &p.t0 {
        logits = g.add(&logits, t0)?;
    }
    Ok(Forward {
        h,
        tree_outputs,
        per_tree_preds,
        logits,
    })
}

/// Maps logits to the task's output space.
pub fn link<G: Graph>(g: &mut G, task: Task, logits: &G::Value) -> Result<G::Value> {
    match task {
        Task::Binary => g.sigmoid(logits),
        Task::Multiclass(_) => g.row_transform(logits, ActivationFamily::SoftmaxSigmoid),
        Task::Regression => Ok(logits.clone()),
    }
}

/// Probabilities (classification) or values (regression), `batch x units`.
pub fn predict(p: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let f = forward(&mut Eager, x, p)?;
    link(&mut Eager, p.spec.task, &f.logits)
}

pub fn model_forward(p: &ModelParams, x: &Tensor) -> Result<ForwardTrace> {
    let f = forward(&mut Eager, x, p)?;
    let prediction = link(&mut Eager, p.spec.task, &f.logits)?;
    let attention_weights = if p.spec.attention && p.spec.uses_trees() {
        let refs: Vec<&Tensor> = f.tree_outputs.iter().collect();
        let stacked = Primitive::ConcatCols.forward(&refs)?;
        let t = f.tree_outputs.len();
        (0..stacked.rows())
            .map(|r| Tensor::new(t, t, attention_weights(stacked.row_slice(r), t, p.spec.head_width())))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(ForwardTrace {
        h: f.h,
        tree_outputs: f.tree_outputs,
        attention_weights,
        per_tree_preds: f.per_tree_preds,
        logits: f.logits,
        prediction,
    })
}

impl<T> ParamTree<T> for Head<T> {
    type Mapped<U> = Head<U>;

    fn map_params<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Head<U> {
        Head {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut T)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<T> ParamTree<T> for ModelParams<T> {
    type Mapped<U> = ModelParams<U>;

    fn map_params<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            spec: self.spec,
            gflu: self.gflu.map_params(f),
            trees: self.trees.iter().map(|t| t.map_params(f)).collect(),
            heads: self.heads.iter().map(|h| h.map_params(f)).collect(),
            eta: f(&self.eta),
            t0: self.t0.as_ref().map(&mut *f),
        }
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.gflu.visit_params(&join(prefix, "gflu"), f);
        for (i, t) in self.trees.iter().enumerate() {
            t.visit_params(&join(prefix, &format!("tree{i}")), f);
        }
        for (i, h) in self.heads.iter().enumerate() {
            h.visit_params(&join(prefix, &format!("head{i}")), f);
        }
        f(join(prefix, "eta"), &self.eta);
        if let Some(t0) = &self.t0 {
            f(join(prefix, "t0"), t0);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut T)) {
        self.gflu.visit_params_mut(f);
        for t in &mut self.trees {
            t.visit_params_mut(f);
        }
        for h in &mut self.heads {
            h.visit_params_mut(f);
        }
        f(&mut self.eta);
        if let Some(t0) = &mut self.t0 {
            f(t0);
        }
    }
}
