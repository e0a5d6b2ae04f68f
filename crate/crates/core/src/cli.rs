//! The `gate` command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::accounting::{self, Itemized, ActivationCosts, ACTIVATION_COSTS};
use crate::activations::ActivationFamily;
use crate::checkpoint::Checkpoint;
use crate::config::{Preset, TrainConfig};
use crate::data::{self, load_csv_with, write_manifest, Dataset, DatasetSchema};
use crate::ensemble::{init_model, ModelSpec};
use crate::error::{GateError, Result};
use crate::gradcheck;
use crate::rng;
use crate::task::Task;
use crate::train::{self, evaluate, predicted_classes, Metrics, TrainHistory};

#[derive(Debug, Parser)]
#[command(name = "gate", version, about = "Gated additive tree ensembles for tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, history and report to --out-dir.
    Train(TrainArgs),
    /// Score a labelled CSV with a saved model.
    Evaluate(ScoreArgs),
    /// Write predictions for a CSV with a saved model.
    Predict(PredictArgs),
    /// Check every backward rule and model gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print parameter and FLOP counts for a configuration.
    Count(CountArgs),
}

/// Configuration layers, applied in order: preset, `--config` file,
/// `--seed`, `--set` pairs, then the per-field flags.
#[derive(Clone, Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML or JSON file with configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Sets the init, shuffle and split seeds to S, S+1 and S+2.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Any configuration field, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// binary, regression or multiclass:K; overrides the schema.
    #[arg(long)]
    pub task: Option<Task>,

    #[arg(long)]
    pub n_gflu_stages: Option<String>,
    #[arg(long)]
    pub n_trees: Option<String>,
    #[arg(long)]
    pub tree_depth: Option<String>,
    #[arg(long, value_name = "BOOL")]
    pub chained: Option<String>,
    #[arg(long, value_name = "BOOL")]
    pub attention: Option<String>,
    /// softmax_sigmoid, entmax15_entmoid15 or sparsemax_sparsemoid.
    #[arg(long)]
    pub activation_family: Option<String>,
    #[arg(long)]
    pub base_lr: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub restart_period: Option<String>,
    #[arg(long)]
    pub restart_mult: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub init_seed: Option<String>,
    #[arg(long)]
    pub shuffle_seed: Option<String>,
    #[arg(long)]
    pub split_seed: Option<String>,
    #[arg(long)]
    pub val_fraction: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<String>,
    #[arg(long)]
    pub gflu_dropout: Option<String>,
    #[arg(long)]
    pub tree_dropout: Option<String>,
}

impl ConfigArgs {
    fn field_flags(&self) -> Vec<(&'static str, &str)> {
        [
            ("n_gflu_stages", &self.n_gflu_stages),
            ("n_trees", &self.n_trees),
            ("tree_depth", &self.tree_depth),
            ("chained", &self.chained),
            ("attention", &self.attention),
            ("activation_family", &self.activation_family),
            ("base_lr", &self.base_lr),
            ("weight_decay", &self.weight_decay),
            ("restart_period", &self.restart_period),
            ("restart_mult", &self.restart_mult),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("init_seed", &self.init_seed),
            ("shuffle_seed", &self.shuffle_seed),
            ("split_seed", &self.split_seed),
            ("val_fraction", &self.val_fraction),
            ("test_fraction", &self.test_fraction),
            ("gflu_dropout", &self.gflu_dropout),
            ("tree_dropout", &self.tree_dropout),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }

    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::preset(self.preset.unwrap_or(Preset::Default));
        if let Some(path) = &self.config {
            config = config.with_file(path)?;
        }
        if let Some(s) = self.seed {
            config.init_seed = s;
            config.shuffle_seed = s.wrapping_add(1);
            config.split_seed = s.wrapping_add(2);
        }
        let mut pairs = Vec::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| GateError::InvalidConfig(vec![format!("--set {item}: expected KEY=VALUE")]))?;
            pairs.push((k.trim(), v.trim()));
        }
        let config = config.with_overrides(pairs)?.with_overrides(self.field_flags())?;
        let config = match self.task {
            Some(task) => TrainConfig {
                task: Some(task),
                ..config
            },
            None => config,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Separate test CSV; otherwise a test split is held out of --data.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Column roles; defaults to schema.toml next to --data.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value = "runs/latest")]
    pub out_dir: PathBuf,
    /// Suppress per-epoch progress.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Checkpoint written by `gate train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the schema stored in the checkpoint.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Restrict to one activation family; all three by default.
    #[arg(long)]
    pub activation_family: Option<ActivationFamily>,
    #[arg(long, default_value = "binary")]
    pub task: Task,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also list every parameter tensor.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Number of input features after encoding.
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => run_train(&args).map(|_| ()),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Predict(args) => run_predict(&args),
        Command::Gradcheck(args) => run_gradcheck(&args),
        Command::Count(args) => run_count(&args),
    }
}

#[derive(Debug, Serialize)]
pub struct SplitMetrics {
    pub rows: usize,
    #[serde(flatten)]
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Serialize)]
pub struct FlopReport {
    pub batch: usize,
    pub total: u64,
    pub groups: Vec<(String, u64)>,
    pub activation_costs: ActivationCosts,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub data: PathBuf,
    pub test_data: Option<PathBuf>,
    pub schema: PathBuf,
    pub features: usize,
    pub task: Task,
    pub spec: ModelSpec,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub train_seconds: f64,
    pub parameters: Itemized,
    pub flops: FlopReport,
    pub seeds: Seeds,
    /// Everything needed to rerun: pass it back with `--config`.
    pub config: TrainConfig,
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub split: u64,
}

fn flop_report(spec: &ModelSpec, batch: usize) -> FlopReport {
    let counted = accounting::count_flops(spec, batch);
    FlopReport {
        batch,
        total: counted.total,
        groups: counted.groups,
        activation_costs: ACTIVATION_COSTS,
    }
}

fn split_metrics(params: &crate::ensemble::ModelParams, data: &Dataset) -> Result<SplitMetrics> {
    Ok(SplitMetrics {
        rows: data.len(),
        metrics: if data.is_empty() { None } else { Some(evaluate(params, data)?) },
    })
}

fn default_schema(data: &Path) -> PathBuf {
    data.parent().unwrap_or(Path::new(".")).join("schema.toml")
}

fn load_schema(path: &Path, task: Option<Task>) -> Result<DatasetSchema> {
    let mut schema = DatasetSchema::load(path)?;
    if let Some(task) = task {
        schema.task = task;
    }
    Ok(schema)
}

pub fn run_train(args: &TrainArgs) -> Result<RunReport> {
    let config = args.config.resolve()?;
    let schema_path = args.schema.clone().unwrap_or_else(|| default_schema(&args.data));
    let schema = load_schema(&schema_path, config.task)?;
    let prepared = data::prepare(
        &schema,
        &args.data,
        args.test_data.as_deref(),
        config.val_fraction,
        config.test_fraction,
        config.split_seed,
    )?;
    let task = schema.task;
    let spec = config.model_spec(prepared.train.d(), task);
    let model = init_model(spec, prepared.train.targets(), &mut rng::seeded(config.init_seed))?;

    fs::create_dir_all(&args.out_dir).map_err(|e| GateError::io(&args.out_dir, e))?;
    let quiet = args.quiet;
    let max_epochs = config.max_epochs;
    let started = Instant::now();
    let (params, history) = train::train_with(model, &prepared.train, &prepared.val, &config, &mut |r| {
        if !quiet {
            eprintln!(
                "epoch {:>3}/{max_epochs}  train {:.5}  val {:.5}  metric {:.5}  lr {:.2e}  {:.1}s",
                r.epoch, r.train_loss, r.val_loss, r.val_metric, r.lr, r.seconds
            );
        }
    })?;
    let train_seconds = started.elapsed().as_secs_f64();

    let checkpoint = Checkpoint {
        params,
        config: config.clone(),
        preprocessing: Some(prepared.preprocessing.clone()),
        schema: Some(schema.clone()),
    };
    checkpoint.save(&args.out_dir.join("model.ckpt"))?;
    history.save_csv(&args.out_dir.join("history.csv"))?;
    for (name, rows) in ["train", "val", "test"].iter().zip(&prepared.indices) {
        write_manifest(&args.out_dir.join(format!("split_{name}.txt")), rows)?;
    }

    let params = &checkpoint.params;
    let report = RunReport {
        data: args.data.clone(),
        test_data: args.test_data.clone(),
        schema: schema_path,
        features: spec.d,
        task,
        spec,
        train: split_metrics(params, &prepared.train)?,
        val: split_metrics(params, &prepared.val)?,
        test: split_metrics(params, &prepared.test)?,
        best_epoch: history.best_epoch,
        epochs_run: history.records.len(),
        stopped_early: history.stopped_early,
        train_seconds,
        parameters: accounting::count_parameters(params),
        flops: flop_report(&spec, 1),
        seeds: Seeds {
            init: config.init_seed,
            shuffle: config.shuffle_seed,
            split: config.split_seed,
        },
        config,
    };
    let path = args.out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| GateError::io(&path, e))?;
    print_summary(&report, &history);
    Ok(report)
}

fn print_summary(report: &RunReport, history: &TrainHistory) {
    let line = |name: &str, s: &SplitMetrics| match &s.metrics {
        Some(m) => println!("{name:<5} rows {:>6}  loss {:.5}  {}", s.rows, m.loss, describe(m)),
        None => println!("{name:<5} rows {:>6}", s.rows),
    };
    println!(
        "best epoch {} of {}{}",
        history.best_epoch,
        history.records.len(),
        if history.stopped_early { " (early stop)" } else { "" }
    );
    line("train", &report.train);
    line("val", &report.val);
    line("test", &report.test);
    println!("parameters {}  flops/row {}", report.parameters.total, report.flops.total);
}

fn describe(m: &Metrics) -> String {
    match (m.accuracy, m.mse) {
        (Some(a), _) => format!("accuracy {a:.5}"),
        (_, Some(e)) => format!("mse {e:.5}"),
        _ => String::new(),
    }
}

fn load_scored(args: &ScoreArgs, require_target: bool) -> Result<(Checkpoint, DatasetSchema, Dataset)> {
    let checkpoint = Checkpoint::load(&args.model)?;
    let schema = match (&args.schema, &checkpoint.schema) {
        (Some(path), _) => load_schema(path, Some(checkpoint.params.spec.task))?,
        (None, Some(s)) => s.clone(),
        (None, None) => return Err(GateError::Data("checkpoint has no schema; pass --schema".into())),
    };
    let preprocessing = checkpoint
        .preprocessing
        .clone()
        .ok_or_else(|| GateError::Preprocessing("checkpoint has no feature transform".into()))?;
    let table = load_csv_with(&args.data, &schema, require_target)?;
    let data = Dataset::from_table(&table, &preprocessing, checkpoint.params.spec.task)?;
    Ok((checkpoint, schema, data))
}

pub fn run_evaluate(args: &ScoreArgs) -> Result<()> {
    let (checkpoint, _, data) = load_scored(args, true)?;
    let metrics = evaluate(&checkpoint.params, &data)?;
    let out = serde_json::json!({ "rows": data.len(), "metrics": metrics });
    println!("{}", serde_json::to_string_pretty(&out).expect("metrics serialize"));
    Ok(())
}

pub fn run_predict(args: &PredictArgs) -> Result<()> {
    let (checkpoint, schema, data) = load_scored(&args.score, false)?;
    let task = checkpoint.params.spec.task;
    let predictions = train::predict_all(&checkpoint.params, &data.x)?;
    let label = |k: usize| match &schema.labels {
        Some(labels) => labels.get(k).cloned().unwrap_or_else(|| k.to_string()),
        None => k.to_string(),
    };

    let mut text = String::new();
    match task {
        Task::Regression => {
            text.push_str("prediction\n");
            for v in predictions.data() {
                text.push_str(&format!("{v:?}\n"));
            }
        }
        Task::Binary | Task::Multiclass(_) => {
            let classes = predicted_classes(task, &predictions);
            let columns: Vec<String> = match task {
                Task::Binary => vec![format!("p_{}", label(1))],
                _ => (0..task.classes()).map(|k| format!("p_{}", label(k))).collect(),
            };
            text.push_str(&columns.join(","));
            text.push_str(",predicted\n");
            for (r, class) in classes.iter().enumerate() {
                let row: Vec<String> = predictions.row_slice(r).iter().map(|v| format!("{v:?}")).collect();
                text.push_str(&row.join(","));
                text.push_str(&format!(",{}\n", label(*class)));
            }
        }
    }
    match &args.output {
        Some(path) => fs::write(path, text).map_err(|e| GateError::io(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| GateError::io("<stdout>", e)),
    }
}

pub fn run_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let families: Vec<ActivationFamily> = match args.activation_family {
        Some(f) => vec![f],
        None => ActivationFamily::ALL.to_vec(),
    };
    let started = Instant::now();
    let report = gradcheck::run(args.task, &families, args.seed)?;
    println!("backward rules ({} checks)", report.rules.len());
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for r in &report.rules {
        match worst.iter_mut().find(|(n, _)| *n == r.rule) {
            Some((_, e)) => *e = e.max(r.rel_error),
            None => worst.push((r.rule, r.rel_error)),
        }
    }
    for (rule, err) in &worst {
        println!("  {rule:<24} max rel err {err:.2e}");
    }
    println!("model gradients, micro configuration, task {}", args.task);
    let mut case = String::new();
    for g in report.groups() {
        if g.case != case {
            println!("  {}", g.case);
            case = g.case.clone();
        }
        println!(
            "    {:<6} max rel err {:.2e}  ({} tensors, {} entries, {} skipped at kinks)",
            g.group, g.max_rel_error, g.tensors, g.checked, g.skipped
        );
    }
    if args.verbose {
        for p in &report.params {
            println!("  [{}] {:<32} {:.2e}", p.case, p.name, p.rel_error);
        }
    }
    let failures = report.failures();
    println!(
        "max rel err {:.2e} (tolerance {:.0e}), {:.1}s",
        report.max_rel_error(),
        report.tolerance,
        started.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        for f in &failures {
            eprintln!("FAIL {f}");
        }
        Err(GateError::GradientCheck(failures))
    }
}

#[derive(Serialize)]
struct CountReport {
    spec: ModelSpec,
    parameters: Itemized,
    flops: FlopReport,
}

pub fn run_count(args: &CountArgs) -> Result<()> {
    let config = args.config.resolve()?;
    if args.d == 0 || args.batch == 0 {
        return Err(GateError::InvalidConfig(vec!["--d and --batch must be at least 1".into()]));
    }
    let spec = config.model_spec(args.d, config.task.unwrap_or(Task::Binary));
    spec.validate()?;
    let report = CountReport {
        spec,
        parameters: accounting::count_spec_parameters(&spec),
        flops: flop_report(&spec, args.batch),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        return Ok(());
    }
    println!("parameters");
    for (group, n) in &report.parameters.groups {
        println!("  {group:<24} {n:>12}");
    }
    println!("  {:<24} {:>12}", "total", report.parameters.total);
    println!("flops (batch {})", args.batch);
    for (group, n) in &report.flops.groups {
        println!("  {group:<24} {n:>12}");
    }
    println!("  {:<24} {:>12}", "total", report.flops.total);
    let c = &report.flops.activation_costs;
    println!(
        "activation cost per element: sigmoid {} tanh {} softmax {} entmax15 {} sparsemax {} entmoid15 {} sparsemoid {}",
        c.sigmoid, c.tanh, c.softmax, c.entmax15, c.sparsemax, c.entmoid15, c.sparsemoid
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("gate").chain(args.iter().copied())).unwrap()
    }

    fn count_config(args: &[&str]) -> Result<TrainConfig> {
        let mut all = vec!["count", "--d", "4"];
        all.extend_from_slice(args);
        match parse(&all).command {
            Command::Count(c) => c.config.resolve(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn preset_then_field_override() {
        let c = count_config(&["--preset", "lite", "--n-trees", "5"]).unwrap();
        let lite = TrainConfig::preset(Preset::Lite);
        assert_eq!(c, TrainConfig { n_trees: 5, ..lite });
    }

    #[test]
    fn field_flags_win_over_set_and_seed() {
        let c = count_config(&["--seed", "10", "--set", "n_trees=7", "--set", "init_seed=1", "--n-trees", "8"]).unwrap();
        assert_eq!((c.n_trees, c.init_seed, c.shuffle_seed, c.split_seed), (8, 1, 11, 12));
    }

    #[test]
    fn bad_values_name_the_field() {
        let err = count_config(&["--tree-depth", "deep"]).unwrap_err();
        assert!(err.to_string().contains("tree_depth"), "{err}");
        assert_eq!(err.exit_code(), 1);
        let err = count_config(&["--set", "colour=red"]).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err = count_config(&["--gflu-dropout", "0.1"]).unwrap_err();
        assert!(err.to_string().contains("gflu_dropout"), "{err}");
    }

    #[test]
    fn depth_zero_with_trees_is_accepted() {
        let c = count_config(&["--tree-depth", "0", "--n-trees", "4"]).unwrap();
        assert!(!c.model_spec(4, Task::Binary).uses_trees());
    }

    #[test]
    fn task_flag() {
        let c = count_config(&["--task", "multiclass:3"]).unwrap();
        assert_eq!(c.task, Some(Task::Multiclass(3)));
    }
}
