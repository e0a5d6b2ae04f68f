//! Training configuration, presets and layered parsing.
//!
//! A configuration is built in three layers: a preset, then the keys of an
//! optional TOML or JSON file, then individual overrides. Every layer is
//! checked for unknown keys and wrong types, and the result is validated
//! as a whole.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::activations::ActivationFamily;
use crate::dndt::MAX_DEPTH;
use crate::ensemble::ModelSpec;
use crate::error::{GateError, Result};
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 6 stages, 20 chained trees of depth 5.
    Default,
    /// 4 stages, 30 parallel trees of depth 5.
    Lite,
    /// 2 stages, 3 trees of depth 2; small enough for exhaustive checks.
    Micro,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Lite => "lite",
            Preset::Micro => "micro",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(Preset::Default),
            "lite" => Ok(Preset::Lite),
            "micro" => Ok(Preset::Micro),
            _ => Err(GateError::InvalidConfig(vec![format!(
                "preset: unknown preset {s:?} (expected default, lite or micro)"
            )])),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_gflu_stages: usize,
    pub n_trees: usize,
    pub tree_depth: usize,
    pub chained: bool,
    pub attention: bool,
    pub activation_family: ActivationFamily,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Epochs per cosine cycle.
    pub restart_period: usize,
    /// Cycle length multiplier after each restart; 1 keeps it fixed.
    pub restart_mult: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    /// Seed of the train/validation/test split.
    pub split_seed: u64,
    pub val_fraction: f64,
    /// Ignored when a separate test file is supplied.
    pub test_fraction: f64,
    /// Overrides the schema's task when set.
    pub task: Option<Task>,
    /// Accepted so preset files that list dropout still load; must be 0.
    pub gflu_dropout: f64,
    pub tree_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_gflu_stages: 6,
            n_trees: 20,
            tree_depth: 5,
            chained: true,
            attention: true,
            activation_family: ActivationFamily::default(),
            base_lr: 1e-3,
            weight_decay: 1e-5,
            restart_period: 50,
            restart_mult: 1,
            batch_size: 1024,
            max_epochs: 200,
            patience: 20,
            init_seed: 42,
            shuffle_seed: 43,
            split_seed: 44,
            val_fraction: 0.2,
            test_fraction: 0.2,
            task: None,
            gflu_dropout: 0.0,
            tree_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = TrainConfig::default();
        match preset {
            Preset::Default => base,
            Preset::Lite => TrainConfig {
                n_gflu_stages: 4,
                n_trees: 30,
                tree_depth: 5,
                chained: false,
                ..base
            },
            Preset::Micro => TrainConfig {
                n_gflu_stages: 2,
                n_trees: 3,
                tree_depth: 2,
                chained: false,
                batch_size: 64,
                ..base
            },
        }
    }

    /// Applies `key = value` pairs on top of `self`. Values are parsed as
    /// TOML scalars, so `0.01`, `true` and `"lite"` all work; bare words are
    /// taken as strings.
    pub fn with_overrides<'a>(self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut map = Map::new();
        for (key, text) in pairs {
            map.insert(key.to_string(), parse_scalar(key, text)?);
        }
        self.merged(map)
    }

    /// Overlays the keys of a JSON object. A `preset` key, if present, is
    /// expanded first and the remaining keys override it.
    pub fn merged(self, mut overrides: Map<String, Value>) -> Result<Self> {
        let mut base = self;
        if let Some(preset) = overrides.remove("preset") {
            let name = preset
                .as_str()
                .ok_or_else(|| GateError::InvalidConfig(vec!["preset: expected a string".into()]))?;
            base = TrainConfig::preset(name.parse()?);
        }
        let Value::Object(mut fields) = serde_json::to_value(&base).expect("config serializes") else {
            unreachable!("config serializes to an object")
        };
        let mut problems = Vec::new();
        for (key, value) in overrides {
            let key = key.replace('-', "_");
            if !fields.contains_key(&key) {
                problems.push(format!("{key}: unknown key"));
                continue;
            }
            // Check each field alone so the error names it.
            let mut probe = fields.clone();
            probe.insert(key.clone(), value.clone());
            match serde_json::from_value::<TrainConfig>(Value::Object(probe)) {
                Ok(_) => {
                    fields.insert(key, value);
                }
                Err(e) => problems.push(format!("{key}: {e}")),
            }
        }
        if !problems.is_empty() {
            return Err(GateError::InvalidConfig(problems));
        }
        let config: TrainConfig =
            serde_json::from_value(Value::Object(fields)).map_err(|e| GateError::InvalidConfig(vec![e.to_string()]))?;
        Ok(config)
    }

    /// Reads a TOML (`.toml`) or JSON file on top of `self`.
    pub fn with_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GateError::InvalidConfig(vec![format!("{}: {e}", path.display())]))?;
        let map = if path.extension().is_some_and(|e| e == "json") {
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(GateError::InvalidConfig(vec![format!("{}: expected an object", path.display())])),
                Err(e) => return Err(GateError::InvalidConfig(vec![format!("{}: {e}", path.display())])),
            }
        } else {
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| GateError::InvalidConfig(vec![format!("{}: {e}", path.display())]))?;
            match serde_json::to_value(table) {
                Ok(Value::Object(m)) => m,
                _ => return Err(GateError::InvalidConfig(vec![format!("{}: unsupported values", path.display())])),
            }
        };
        self.merged(map)
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.tree_depth > MAX_DEPTH {
            p.push(format!("tree_depth: must be at most {MAX_DEPTH}, got {}", self.tree_depth));
        }
        if self.tree_depth > 0 && self.n_trees == 0 {
            p.push("n_trees: must be at least 1 when tree_depth > 0".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            p.push(format!("base_lr: must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            p.push(format!("weight_decay: must be non-negative, got {}", self.weight_decay));
        }
        for (name, v) in [
            ("restart_period", self.restart_period),
            ("restart_mult", self.restart_mult),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                p.push(format!("{name}: must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            p.push(format!("val_fraction: must be in [0, 1), got {}", self.val_fraction));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            p.push(format!("test_fraction: must be in [0, 1), got {}", self.test_fraction));
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            p.push("val_fraction + test_fraction: must leave rows for training".into());
        }
        for (name, v) in [("gflu_dropout", self.gflu_dropout), ("tree_dropout", self.tree_dropout)] {
            if v != 0.0 {
                p.push(format!("{name}: dropout is not supported, must be 0.0, got {v}"));
            }
        }
        if let Some(Task::Multiclass(k)) = self.task {
            if k < 2 {
                p.push(format!("task: multiclass needs at least 2 classes, got {k}"));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(GateError::InvalidConfig(p))
        }
    }

    pub fn model_spec(&self, d: usize, task: Task) -> ModelSpec {
        ModelSpec {
            d,
            n_stages: self.n_gflu_stages,
            n_trees: self.n_trees,
            depth: self.tree_depth,
            chained: self.chained,
            attention: self.attention,
            task,
            family: self.activation_family,
        }
    }
}

fn parse_scalar(key: &str, text: &str) -> Result<Value> {
    let doc = format!("v = {text}");
    let parsed = toml::from_str::<toml::Table>(&doc)
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()));
    serde_json::to_value(parsed).map_err(|e| GateError::InvalidConfig(vec![format!("{key}: {e}")]))
}
