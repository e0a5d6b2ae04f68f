use gate::activations::{entmax15_row, row_transform, scalar_gate, sparsemax_row};
use gate::checkpoint::Checkpoint;
use gate::data::{stratified_split, Standardizer};
use gate::dndt::{init_tree, tree_forward};
use gate::ensemble::{init_model, model_forward, predict};
use gate::params::ParamTree;
use gate::rng;
use gate::tensor::{Eager, Graph, Primitive};
use gate::{ActivationFamily, ModelSpec, Task, Tensor, TrainConfig};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = ActivationFamily> {
    prop::sample::select(ActivationFamily::ALL.to_vec())
}

fn task() -> impl Strategy<Value = Task> {
    prop_oneof![Just(Task::Binary), Just(Task::Regression), (2usize..5).prop_map(Task::Multiclass)]
}

prop_compose! {
    fn spec()(
        d in 1usize..6,
        n_stages in 0usize..3,
        n_trees in 1usize..5,
        depth in 0usize..4,
        chained in any::<bool>(),
        attention in any::<bool>(),
        task in task(),
        family in family(),
    ) -> ModelSpec {
        ModelSpec { d, n_stages, n_trees, depth, chained, attention, task, family }
    }
}

/// Integer labels whose count is a power of two, so the mean is exact.
fn labels_with_exact_mean() -> impl Strategy<Value = Vec<i32>> {
    prop::sample::select(vec![1usize, 2, 4, 8, 16]).prop_flat_map(|n| prop::collection::vec(-50i32..50, n))
}

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_transforms_land_on_the_simplex(z in vector(), f in family()) {
        let p = row_transform(f, &z).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn row_transforms_ignore_a_common_shift(z in vector(), c in -5.0f64..5.0, f in family()) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let a = row_transform(f, &z).unwrap();
        let b = row_transform(f, &shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sparsemax_is_a_thresholded_shift(z in vector()) {
        let p = sparsemax_row(&z);
        // every supported entry sits the same distance below its score
        let taus: Vec<f64> = z.iter().zip(&p).filter(|(_, &q)| q > 0.0).map(|(v, q)| v - q).collect();
        let tau = taus[0];
        prop_assert!(taus.iter().all(|t| (t - tau).abs() < 1e-9));
        for (v, q) in z.iter().zip(&p) {
            if *q == 0.0 {
                prop_assert!(*v <= tau + 1e-9);
            }
        }
    }

    #[test]
    fn entmax15_is_a_squared_thresholded_shift(z in vector()) {
        let p = entmax15_row(&z).unwrap();
        let taus: Vec<f64> = z.iter().zip(&p).filter(|(_, &q)| q > 1e-12).map(|(v, q)| v / 2.0 - q.sqrt()).collect();
        let tau = taus[0];
        prop_assert!(taus.iter().all(|t| (t - tau).abs() < 1e-7));
        for (v, q) in z.iter().zip(&p) {
            if *q == 0.0 {
                prop_assert!(v / 2.0 <= tau + 1e-7);
            }
        }
    }

    #[test]
    fn scalar_gates_are_symmetric_and_monotone(x in -6.0f64..6.0, dx in 0.0f64..1.0, f in family()) {
        let g = scalar_gate(f, x);
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!((g + scalar_gate(f, -x) - 1.0).abs() < 1e-12);
        prop_assert!(scalar_gate(f, x + dx) >= g);
    }

    #[test]
    fn tree_output_width_is_two_to_the_depth(m in 1usize..6, depth in 1usize..7, rows in 1usize..4, f in family(), seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let tree = init_tree(m, depth, &mut r).unwrap();
        let h = rng::normal(&mut r, rows, m, 1.0);
        let out = tree_forward(&mut Eager, &h, &tree, f).unwrap();
        prop_assert_eq!(out.shape(), (rows, 1 << depth));
    }

    #[test]
    fn model_outputs_respect_the_task(s in spec(), rows in 1usize..5, seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let mut p = init_model(s, &[0.5, 1.5], &mut r).unwrap();
        p.eta = rng::normal(&mut r, 1, p.eta.cols(), 1.0);
        let x = rng::normal(&mut r, rows, s.d, 1.0);
        let trace = model_forward(&p, &x).unwrap();
        prop_assert_eq!(trace.prediction.shape(), (rows, s.task.output_units()));
        match s.task {
            Task::Binary => prop_assert!(trace.prediction.data().iter().all(|&v| v > 0.0 && v < 1.0)),
            Task::Multiclass(_) => {
                for i in 0..rows {
                    let row = trace.prediction.row_slice(i);
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            Task::Regression => prop_assert!(trace.prediction.data().iter().all(|v| v.is_finite())),
        }
        if s.uses_trees() {
            prop_assert_eq!(trace.tree_outputs.len(), s.n_trees);
            for o in &trace.tree_outputs {
                prop_assert_eq!(o.shape(), (rows, 1 << s.depth));
            }
        }
        if s.uses_trees() && s.attention {
            prop_assert_eq!(trace.attention_weights.len(), rows);
            for w in &trace.attention_weights {
                for i in 0..w.rows() {
                    prop_assert!((w.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        } else {
            prop_assert!(trace.attention_weights.is_empty());
            // without attention each head reads its tree output unchanged
            for ((o, head), y) in trace.tree_outputs.iter().zip(&p.heads).zip(&trace.per_tree_preds) {
                let y0 = Eager.matmul(o, &head.weight).unwrap();
                let expect = Eager.add(&y0, &head.bias).unwrap();
                prop_assert_eq!(&expect, y);
            }
        }
    }

    #[test]
    fn attention_commutes_with_tree_permutations(trees in 1usize..6, width in 1usize..5, rows in 1usize..3, seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let x = rng::normal(&mut r, rows, trees * width, 1.0);
        let mut perm: Vec<usize> = (0..trees).collect();
        perm.rotate_left(seed as usize % trees);
        if trees > 2 {
            perm.swap(0, 2);
        }
        let permute = |t: &Tensor| {
            Tensor::from_fn(t.rows(), t.cols(), |i, j| t.get(i, perm[j / width] * width + j % width))
        };
        let op = Primitive::TreeAttention { trees };
        let a = permute(&op.forward(&[&x]).unwrap());
        let b = op.forward(&[&permute(&x)]).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_regression_prediction_is_the_label_mean(s in spec(), labels in labels_with_exact_mean(), c in -20i32..20) {
        let s = ModelSpec { task: Task::Regression, ..s };
        let labels: Vec<f64> = labels.into_iter().map(f64::from).collect();
        let shifted: Vec<f64> = labels.iter().map(|v| v + f64::from(c)).collect();
        let a = init_model(s, &labels, &mut rng::seeded(3)).unwrap();
        let b = init_model(s, &shifted, &mut rng::seeded(3)).unwrap();
        let x = rng::normal(&mut rng::seeded(4), 3, s.d, 1.0);
        let pa = predict(&a, &x).unwrap();
        let pb = predict(&b, &x).unwrap();
        let t0 = a.t0.as_ref().unwrap().item().unwrap();
        for (u, v) in pa.data().iter().zip(pb.data()) {
            prop_assert_eq!(*u, t0);
            prop_assert_eq!(v - u, f64::from(c));
        }
    }

    #[test]
    fn checkpoints_round_trip_any_model(s in spec(), seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let mut params = init_model(s, &[2.0], &mut r).unwrap();
        params.visit_params_mut(&mut |t| {
            let noise = rng::normal(&mut r, t.rows(), t.cols(), 1.0);
            *t = Eager.add(t, &noise).unwrap();
        });
        let ck = Checkpoint { params, config: TrainConfig::default(), preprocessing: None, schema: None };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let a: Vec<u64> = ck.params.flatten().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect();
        let b: Vec<u64> = back.params.flatten().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.params.spec, s);
    }

    #[test]
    fn stratified_split_partitions_rows(classes in prop::collection::vec(0u8..3, 30..120), seed in any::<u64>()) {
        let targets: Vec<f64> = classes.iter().map(|&c| f64::from(c)).collect();
        let counts: Vec<usize> = (0..3).map(|k| classes.iter().filter(|&&c| c == k).count()).collect();
        prop_assume!(counts.iter().all(|&n| n >= 3));
        let parts = stratified_split(&targets, Task::Multiclass(3), [0.6, 0.2, 0.2], seed).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..targets.len()).collect::<Vec<_>>());
        for (part, frac) in parts.iter().zip([0.6, 0.2, 0.2]) {
            for (k, &n) in counts.iter().enumerate() {
                let got = part.iter().filter(|&&i| classes[i] == k as u8).count() as f64;
                prop_assert!((got - frac * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn standardized_columns_are_centered_and_scaled(rows in 2usize..40, cols in 1usize..5, seed in any::<u64>()) {
        let mut x = rng::normal(&mut rng::seeded(seed), rows, cols, 3.0);
        let s = Standardizer::fit(&x, cols);
        s.transform(&mut x).unwrap();
        for j in 0..cols {
            let col: Vec<f64> = (0..rows).map(|i| x.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn overrides_set_exactly_the_named_field(trees in 1usize..100, lr in 1e-5f64..1.0, chained in any::<bool>()) {
        let (t, l, c) = (trees.to_string(), format!("{lr:?}"), chained.to_string());
        let config = TrainConfig::default()
            .with_overrides([("n_trees", t.as_str()), ("base-lr", l.as_str()), ("chained", c.as_str())])
            .unwrap();
        prop_assert_eq!(config, TrainConfig { n_trees: trees, base_lr: lr, chained, ..TrainConfig::default() });
    }
}
