//! Finite-difference verification of every backward rule and of the
//! end-to-end model gradient.

use rand::Rng;
use serde::Serialize;

use crate::activations::ActivationFamily;
use crate::ensemble::{self, init_model, ModelParams, ModelSpec};
use crate::error::{GateError, Result};
use crate::params::ParamTree;
use crate::rng;
use crate::task::Task;
use crate::tensor::{gradient_discrepancy, Discrepancy, Eager, Graph, Primitive, PrimitiveKind, Tape, Tensor};
use crate::train::{loss_and_grads, loss_from_logits};

pub const TOLERANCE: f64 = 1e-4;
pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    /// Model configuration the check ran under.
    pub case: String,
    pub name: String,
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RuleCheck {
    pub rule: &'static str,
    pub input: usize,
    pub rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub rules: Vec<RuleCheck>,
    pub params: Vec<ParamCheck>,
}

/// Worst relative error of one parameter group (`gflu`, `tree`, `head`,
/// `eta`, `t0`) within one case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub case: String,
    pub group: String,
    pub max_rel_error: f64,
    pub tensors: usize,
    pub checked: usize,
    pub skipped: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// One line per failing rule or parameter.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .rules
            .iter()
            .filter(|r| !(r.rel_error < self.tolerance) || r.checked == 0)
            .map(|r| format!("backward rule `{}` (input {}): rel error {:.3e}", r.rule, r.input, r.rel_error))
            .collect();
        out.extend(
            self.params
                .iter()
                .filter(|p| !(p.rel_error < self.tolerance))
                .map(|p| format!("[{}] parameter `{}`: rel error {:.3e}", p.case, p.name, p.rel_error)),
        );
        out
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rules
            .iter()
            .map(|r| r.rel_error)
            .chain(self.params.iter().map(|p| p.rel_error))
            .fold(0.0, f64::max)
    }

    pub fn groups(&self) -> Vec<GroupSummary> {
        let mut out: Vec<GroupSummary> = Vec::new();
        for p in &self.params {
            let head = p.name.split('.').next().unwrap_or("");
            let group = match head.trim_end_matches(|c: char| c.is_ascii_digit()) {
                g @ ("tree" | "head") => g.to_string(),
                _ => head.to_string(),
            };
            match out.iter_mut().find(|g| g.case == p.case && g.group == group) {
                Some(g) => {
                    g.max_rel_error = g.max_rel_error.max(p.rel_error);
                    g.tensors += 1;
                    g.checked += p.checked;
                    g.skipped += p.skipped;
                }
                None => out.push(GroupSummary {
                    case: p.case.clone(),
                    group,
                    max_rel_error: p.rel_error,
                    tensors: 1,
                    checked: p.checked,
                    skipped: p.skipped,
                }),
            }
        }
        out
    }
}

/// The small model used for exhaustive checks: `d = 6`, two feature
/// stages, three trees of depth 2.
pub fn micro_spec(task: Task, chained: bool, attention: bool, family: ActivationFamily) -> ModelSpec {
    ModelSpec {
        d: 6,
        n_stages: 2,
        n_trees: 3,
        depth: 2,
        chained,
        attention,
        task,
        family,
    }
}

pub fn case_name(spec: &ModelSpec) -> String {
    format!(
        "{} {} attention={} {}",
        spec.task,
        if spec.chained { "chained" } else { "parallel" },
        if spec.attention { "on" } else { "off" },
        spec.family
    )
}

fn random_targets(task: Task, rows: usize, rng: &mut rng::GateRng) -> Tensor {
    Tensor::from_fn(rows, 1, |_, _| match task {
        Task::Regression => rng.random_range(-2.0..2.0),
        _ => rng.random_range(0..task.classes()) as f64,
    })
}

/// A model with every parameter away from its special initial value, so
/// that no gradient path is switched off (zero mixing weights would zero
/// every upstream gradient).
pub fn perturbed_model(spec: ModelSpec, seed: u64) -> Result<ModelParams> {
    let mut r = rng::seeded(seed);
    let mut p = init_model(spec, &[0.5], &mut r)?;
    p.eta = rng::normal(&mut r, 1, p.eta.cols(), 1.0);
    if let Some(t0) = &mut p.t0 {
        *t0 = rng::normal(&mut r, 1, t0.cols(), 1.0);
    }
    Ok(p)
}

/// Compares the tape gradient of the batch loss with central differences
/// for every parameter tensor of `params`.
pub fn check_params(params: &ModelParams, x: &Tensor, y: &Tensor, eps: f64) -> Result<Vec<ParamCheck>> {
    let case = case_name(&params.spec);
    let (_, grads) = loss_and_grads(params, x, y)?;
    let names = params.names();
    let values: Vec<Tensor> = params.flatten().into_iter().cloned().collect();
    let mut out = Vec::with_capacity(values.len());
    for (k, value) in values.iter().enumerate() {
        let mut probe_model = params.clone();
        let d = gradient_discrepancy(
            &grads[k],
            |probe| {
                let mut n = 0;
                probe_model.visit_params_mut(&mut |t| {
                    if n == k {
                        t.data_mut().copy_from_slice(probe.data());
                    }
                    n += 1;
                });
                let f = ensemble::forward(&mut Eager, x, &probe_model)?;
                loss_from_logits(&mut Eager, params.spec.task, &f.logits, y)?.item()
            },
            value,
            eps,
        )?;
        out.push(ParamCheck {
            case: case.clone(),
            name: names[k].clone(),
            rel_error: d.rel_error,
            max_abs_error: d.max_abs_error,
            checked: d.checked,
            skipped: d.skipped,
        });
    }
    Ok(out)
}

/// Builds a perturbed model for `spec` with a random batch and checks it.
pub fn check_model(spec: ModelSpec, batch: usize, seed: u64, eps: f64) -> Result<Vec<ParamCheck>> {
    let params = perturbed_model(spec, seed)?;
    let mut r = rng::seeded(seed ^ 0x5eed);
    let x = rng::normal(&mut r, batch, spec.d, 1.0);
    let y = random_targets(spec.task, batch, &mut r);
    check_params(&params, &x, &y, eps)
}

/// Inputs exercising one primitive: values and whether each takes a
/// gradient.
fn primitive_case(kind: PrimitiveKind, family: ActivationFamily, r: &mut rng::GateRng) -> (Primitive, Vec<(Tensor, bool)>) {
    let n = |r: &mut rng::GateRng, rows, cols| rng::normal(r, rows, cols, 1.0);
    match kind {
        PrimitiveKind::MatMul => (Primitive::MatMul, vec![(n(r, 3, 4), true), (n(r, 4, 2), true)]),
        PrimitiveKind::MatMulTransposed => (Primitive::MatMulTransposed, vec![(n(r, 3, 4), true), (n(r, 2, 4), true)]),
        PrimitiveKind::Transpose => (Primitive::Transpose, vec![(n(r, 3, 4), true)]),
        PrimitiveKind::Add => (Primitive::Add, vec![(n(r, 3, 4), true), (n(r, 1, 4), true)]),
        PrimitiveKind::Sub => (Primitive::Sub, vec![(n(r, 3, 4), true), (n(r, 1, 1), true)]),
        PrimitiveKind::Mul => (Primitive::Mul, vec![(n(r, 3, 4), true), (n(r, 3, 4), true)]),
        PrimitiveKind::ConcatCols => (Primitive::ConcatCols, vec![(n(r, 3, 2), true), (n(r, 3, 3), true)]),
        PrimitiveKind::SliceCols => (Primitive::SliceCols { start: 1, end: 3 }, vec![(n(r, 3, 4), true)]),
        PrimitiveKind::ReduceSum => (Primitive::ReduceSum, vec![(n(r, 3, 4), true)]),
        PrimitiveKind::ReduceMean => (Primitive::ReduceMean, vec![(n(r, 3, 4), true)]),
        PrimitiveKind::BroadcastRow => (Primitive::BroadcastRow { rows: 3 }, vec![(n(r, 1, 4), true)]),
        PrimitiveKind::Tanh => (Primitive::Tanh, vec![(n(r, 3, 4), true)]),
        PrimitiveKind::Sigmoid => (Primitive::Sigmoid, vec![(n(r, 3, 4), true)]),
        PrimitiveKind::Scale => (Primitive::Scale(1.7), vec![(n(r, 3, 4), true)]),
        PrimitiveKind::RowTransform => (Primitive::RowTransform(family), vec![(n(r, 3, 5), true)]),
        PrimitiveKind::ScalarGate => (Primitive::ScalarGate(family), vec![(n(r, 3, 4), true)]),
        PrimitiveKind::StumpLevel => (
            Primitive::StumpLevel(family),
            vec![(n(r, 3, 4), true), (n(r, 2, 4), true), (n(r, 2, 4), true), (n(r, 2, 4), true)],
        ),
        PrimitiveKind::TreeAttention => (Primitive::TreeAttention { trees: 3 }, vec![(n(r, 2, 12), true)]),
        PrimitiveKind::BinaryCrossEntropy => {
            let y = Tensor::from_fn(4, 1, |_, _| f64::from(r.random_range(0..2u8)));
            (Primitive::BinaryCrossEntropy, vec![(n(r, 4, 1), true), (y, false)])
        }
        PrimitiveKind::SoftmaxCrossEntropy => {
            let y = Tensor::from_fn(4, 1, |_, _| f64::from(r.random_range(0..3u8)));
            (Primitive::SoftmaxCrossEntropy, vec![(n(r, 4, 3), true), (y, false)])
        }
    }
}

/// Checks one primitive's backward rule through the loss `sum(w * out)`
/// with random fixed weights `w`.
pub fn check_primitive(kind: PrimitiveKind, family: ActivationFamily, seed: u64, eps: f64) -> Result<Vec<RuleCheck>> {
    let mut r = rng::seeded(seed);
    let (primitive, inputs) = primitive_case(kind, family, &mut r);
    let values: Vec<&Tensor> = inputs.iter().map(|(t, _)| t).collect();
    let out_shape = primitive.forward(&values)?.shape();
    let weights = rng::normal(&mut r, out_shape.0, out_shape.1, 1.0);

    let mut tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|(t, diff)| if *diff { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let out = tape.apply(primitive.clone(), &vars)?;
    let w = tape.constant(weights.clone());
    let prod = tape.mul(&out, &w)?;
    let loss = tape.reduce_sum(&prod)?;
    let grads = tape.backward(loss)?;

    let mut checks = Vec::new();
    for (i, (value, diff)) in inputs.iter().enumerate() {
        if !diff {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[i], value);
        let d: Discrepancy = gradient_discrepancy(
            &analytic,
            |probe| {
                let mut args: Vec<&Tensor> = values.clone();
                args[i] = probe;
                let out = primitive.forward(&args)?;
                Ok(out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
            },
            value,
            eps,
        )?;
        checks.push(RuleCheck {
            rule: kind.name(),
            input: i,
            rel_error: d.rel_error,
            checked: d.checked,
            skipped: d.skipped,
        });
    }
    Ok(checks)
}

/// Every primitive (family-dependent ones under each family), then the
/// micro model in all four chained/attention combinations under `families`.
pub fn run(task: Task, families: &[ActivationFamily], seed: u64) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        tolerance: TOLERANCE,
        ..Default::default()
    };
    for (i, &kind) in PrimitiveKind::ALL.iter().enumerate() {
        let family_dependent = matches!(
            kind,
            PrimitiveKind::RowTransform | PrimitiveKind::ScalarGate | PrimitiveKind::StumpLevel
        );
        let fams: &[ActivationFamily] = if family_dependent { families } else { &families[..1.min(families.len())] };
        for &family in fams {
            report.rules.extend(check_primitive(kind, family, seed + i as u64, EPS)?);
        }
    }
    for &family in families {
        for chained in [false, true] {
            for attention in [true, false] {
                let spec = micro_spec(task, chained, attention, family);
                report.params.extend(check_model(spec, 4, seed, EPS)?);
            }
        }
    }
    if report.params.is_empty() {
        return Err(GateError::InvalidConfig(vec!["gradcheck: no activation family selected".into()]));
    }
    Ok(report)
}
