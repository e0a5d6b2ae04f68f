//! Parameter and FLOP accounting.
//!
//! FLOPs are counted analytically: `2mnk` for an `(m,k) x (k,n)` product,
//! one per elementwise arithmetic op, and a fixed per-element cost for each
//! activation (see [`ActivationCosts`]). Concatenation and slicing are free.

use serde::Serialize;

use crate::activations::ActivationFamily;
use crate::dndt;
use crate::ensemble::{expected_shapes, ModelParams, ModelSpec};
use crate::params::ParamTree;
use crate::task::Task;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Itemized {
    pub groups: Vec<(String, u64)>,
    pub total: u64,
}

impl Itemized {
    fn from_items(items: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut groups: Vec<(String, u64)> = Vec::new();
        for (name, n) in items {
            match groups.iter_mut().find(|(g, _)| *g == name) {
                Some((_, acc)) => *acc += n,
                None => groups.push((name, n)),
            }
        }
        let total = groups.iter().map(|(_, n)| n).sum();
        Itemized { groups, total }
    }

    pub fn get(&self, group: &str) -> u64 {
        self.groups.iter().find(|(g, _)| g == group).map_or(0, |(_, n)| *n)
    }
}

/// `gflu.stage3.gate_weights` -> `gflu.gate_weights`,
/// `tree7.level2.leaf_left` -> `tree.leaf_left`, `eta` -> `eta`.
fn group_of(name: &str) -> String {
    match name.split_once('.') {
        Some((first, rest)) => {
            let first = first.trim_end_matches(|c: char| c.is_ascii_digit());
            let last = rest.rsplit('.').next().unwrap_or(rest);
            format!("{first}.{last}")
        }
        None => name.to_string(),
    }
}

/// Learnable scalars of a model, grouped by role.
pub fn count_parameters(p: &ModelParams) -> Itemized {
    let mut items = Vec::new();
    p.visit_params("", &mut |name, t| items.push((group_of(&name), t.len() as u64)));
    Itemized::from_items(items)
}

/// Same as [`count_parameters`] without allocating the model.
pub fn count_spec_parameters(spec: &ModelSpec) -> Itemized {
    Itemized::from_items(
        expected_shapes(spec)
            .into_iter()
            .map(|(name, (r, c))| (group_of(&name), (r * c) as u64)),
    )
}

/// Per-element cost of each nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ActivationCosts {
    pub sigmoid: u64,
    pub tanh: u64,
    pub softmax: u64,
    pub entmax15: u64,
    pub sparsemax: u64,
    pub entmoid15: u64,
    pub sparsemoid: u64,
}

pub const ACTIVATION_COSTS: ActivationCosts = ActivationCosts {
    // exp, add, div
    sigmoid: 3,
    // two exps, add, sub, div
    tanh: 5,
    // max, sub, exp, sum, div
    softmax: 5,
    // sort plus threshold search, pow, polish
    entmax15: 12,
    // sort plus threshold search, sub, clip
    sparsemax: 8,
    // compare, sqrt, a few mul/add
    entmoid15: 6,
    // mul, add, clip
    sparsemoid: 3,
};

impl ActivationCosts {
    /// `(row transform, scalar gate)` cost for a family.
    pub fn family(&self, family: ActivationFamily) -> (u64, u64) {
        match family {
            ActivationFamily::SoftmaxSigmoid => (self.softmax, self.sigmoid),
            ActivationFamily::Entmax15Entmoid15 => (self.entmax15, self.entmoid15),
            ActivationFamily::SparsemaxSparsemoid => (self.sparsemax, self.sparsemoid),
        }
    }
}

fn matmul(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

fn gflu_stage_flops(d: usize, batch: usize, row: u64, c: &ActivationCosts) -> u64 {
    let (b, d64) = (batch as u64, d as u64);
    let mask = row * d64;
    let select = b * d64;
    let gates = matmul(batch, 2 * d, 2 * d) + c.sigmoid * b * 2 * d64;
    let reset = b * d64;
    let candidate = matmul(batch, 2 * d, d) + c.tanh * b * d64;
    // h + z (h~ - h)
    let blend = 3 * b * d64;
    mask + select + gates + reset + candidate + blend
}

fn tree_level_flops(stumps: usize, m: usize, batch: usize, row: u64, gate: u64) -> u64 {
    let (b, s, m) = (batch as u64, stumps as u64, m as u64);
    // masked leaf responses, both sides
    let weights = row * s * m + 2 * s * m;
    // left gate shared by all stumps of the level
    let left = gate * b * m;
    // per stump: left product-sum, 2x - c, right gate, right product-sum
    let stump = b * s * m * (2 + 2 + gate + 2);
    weights + left + stump
}

fn attention_flops(trees: usize, width: usize, batch: usize, softmax: u64) -> u64 {
    let (b, t) = (batch as u64, trees as u64);
    let scores = matmul(trees, width, trees) + t * t;
    let weights = softmax * t * t;
    let mix = matmul(trees, trees, width);
    b * (scores + weights + mix)
}

/// Analytic forward-pass FLOPs for `batch` rows, itemized by stage.
pub fn count_flops(spec: &ModelSpec, batch: usize) -> Itemized {
    let c = &ACTIVATION_COSTS;
    let (row, gate) = c.family(spec.family);
    let mut items = Vec::new();
    for _ in 0..spec.n_stages {
        items.push(("gflu".to_string(), gflu_stage_flops(spec.d, batch, row, c)));
    }
    if spec.uses_trees() {
        let levels = dndt::level_shapes(spec.tree_input_width(), spec.depth);
        for _ in 0..spec.n_trees {
            for &(stumps, m) in &levels {
                items.push(("trees".to_string(), tree_level_flops(stumps, m, batch, row, gate)));
            }
        }
        if spec.attention {
            items.push((
                "attention".to_string(),
                attention_flops(spec.n_trees, spec.head_width(), batch, c.softmax),
            ));
        }
    }
    let units = spec.task.output_units();
    let (b, u) = (batch as u64, units as u64);
    let heads = spec.n_heads();
    for _ in 0..heads {
        // product, bias, eta scaling
        items.push(("heads".to_string(), matmul(batch, spec.head_width(), units) + 2 * b * u));
    }
    let mut mixing = (heads as u64).saturating_sub(1) * b * u;
    if spec.task == Task::Regression {
        mixing += b * u;
    }
    items.push(("mixing".to_string(), mixing));
    let link = match spec.task {
        Task::Binary => c.sigmoid * b,
        Task::Multiclass(k) => c.softmax * b * k as u64,
        Task::Regression => 0,
    };
    items.push(("link".to_string(), link));
    Itemized::from_items(items)
}
