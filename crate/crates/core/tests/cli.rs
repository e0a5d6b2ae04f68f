use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gate")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 200 rows, two informative numeric columns, one categorical column.
fn toy_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut csv = String::from("a,b,noise,colour,label\n");
    for _ in 0..200 {
        let a: f64 = rng.random_range(-2.0..2.0);
        let b: f64 = rng.random_range(-2.0..2.0);
        let colour = ["red", "green", "blue"][rng.random_range(0..3)];
        let label = if a + 0.5 * b > 0.0 { "yes" } else { "no" };
        writeln!(csv, "{a},{b},{},{colour},{label}", rng.random_range(0.0..1.0)).unwrap();
    }
    let data = dir.join("toy.csv");
    std::fs::write(&data, csv).unwrap();
    let schema = dir.join("schema.toml");
    std::fs::write(
        &schema,
        "task = \"binary\"\ntarget = \"label\"\nnumeric = [\"a\", \"b\", \"noise\"]\ncategorical = [\"colour\"]\nlabels = [\"no\", \"yes\"]\n",
    )
    .unwrap();
    (data, schema)
}

fn train_toy(dir: &Path) -> PathBuf {
    let (data, _) = toy_dataset(dir);
    let out = dir.join("run");
    let o = gate(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--preset",
        "micro",
        "--max-epochs",
        "4",
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn train_writes_checkpoint_history_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_toy(dir.path());
    for f in ["model.ckpt", "history.csv", "report.json", "split_train.txt", "split_val.txt", "split_test.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,val_loss,val_metric,lr,seconds");
    assert_eq!(history.lines().count(), 5);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    // three numeric columns plus three one-hot columns
    assert_eq!(report["features"], 6);
    assert!(report["test"]["accuracy"].as_f64().unwrap() > 0.0);
    assert!(report["parameters"]["total"].as_u64().unwrap() > 0);
    assert!(report["flops"]["total"].as_u64().unwrap() > 0);
    assert!(report["flops"]["activation_costs"]["entmax15"].as_u64().is_some());
    assert_eq!(report["seeds"]["init"], 42);
    assert_eq!(report["config"]["n_trees"], 3);
    let rows: u64 = ["train", "val", "test"].iter().map(|s| report[s]["rows"].as_u64().unwrap()).sum();
    assert_eq!(rows, 200);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_toy(dir.path());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let config = dir.path().join("echo.json");
    std::fs::write(&config, report["config"].to_string()).unwrap();
    let again = dir.path().join("again");
    let o = gate(&[
        "train",
        "--data",
        dir.path().join("toy.csv").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        again.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let strip = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("history.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
            .collect()
    };
    assert_eq!(strip(&out), strip(&again));
    assert_eq!(
        std::fs::read(out.join("model.ckpt")).unwrap(),
        std::fs::read(again.join("model.ckpt")).unwrap()
    );
}

#[test]
fn evaluate_and_predict_use_the_stored_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_toy(dir.path());
    let model = out.join("model.ckpt");
    let data = dir.path().join("toy.csv");

    let o = gate(&["evaluate", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"], 200);
    assert!(v["metrics"]["accuracy"].as_f64().unwrap() > 0.0);

    // prediction does not need the target column
    let unlabelled = dir.path().join("unlabelled.csv");
    let text = std::fs::read_to_string(&data).unwrap();
    let stripped: String = text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect();
    std::fs::write(&unlabelled, stripped).unwrap();
    let preds = dir.path().join("preds.csv");
    let o = gate(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--data",
        unlabelled.to_str().unwrap(),
        "--output",
        preds.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = std::fs::read_to_string(preds).unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next().unwrap(), "p_yes,predicted");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 200);
    for row in rows {
        let (p, label) = row.split_once(',').unwrap();
        let p: f64 = p.parse().unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(label, if p > 0.5 { "yes" } else { "no" });
    }
}

#[test]
fn missing_data_file_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (_, schema) = toy_dataset(dir.path());
    let o = gate(&["train", "--data", "/nonexistent/rows.csv", "--schema", schema.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/rows.csv"), "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = toy_dataset(dir.path());
    let data = data.to_str().unwrap();
    for extra in [
        vec!["--tree-depth", "nine"],
        vec!["--tree-dropout", "0.2"],
        vec!["--set", "unknown_key=1"],
        vec!["--preset", "huge"],
    ] {
        let mut args = vec!["train", "--data", data];
        args.extend(extra.iter().copied());
        let o = gate(&args);
        assert_eq!(o.status.code(), Some(1), "{extra:?}: {}", stderr(&o));
    }
    let o = gate(&["train"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupted_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_toy(dir.path());
    let model = out.join("model.ckpt");
    let mut bytes = std::fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&model, bytes).unwrap();
    let o = gate(&["evaluate", "--model", model.to_str().unwrap(), "--data", dir.path().join("toy.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_covers_both_modes() {
    let o = gate(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("chained") && text.contains("parallel"));
    for family in ["softmax_sigmoid", "entmax15_entmoid15", "sparsemax_sparsemoid"] {
        assert!(text.contains(family), "{family}");
    }
    assert!(text.trim_end().ends_with("PASS"));
}

#[test]
fn count_prints_groups_and_totals() {
    let o = gate(&["count", "--preset", "lite", "--d", "123", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["spec"]["n_trees"], 30);
    assert!(v["parameters"]["total"].as_u64().unwrap() > 500_000);

    let o = gate(&["count", "--d", "7", "--n-gflu-stages", "0", "--tree-depth", "0", "--n-trees", "0", "--task", "regression", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // head weight 7 + head bias 1 + eta 1 + t0 1
    assert_eq!(v["parameters"]["total"], 10);
}
