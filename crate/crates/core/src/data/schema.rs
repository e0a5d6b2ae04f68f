//! Sidecar schema files declaring column roles.
//!
//! ```toml
//! task = "multiclass"        # binary | multiclass | regression
//! classes = 3                # multiclass only
//! target = "species"
//! numeric = ["sepal_length", "sepal_width"]
//! categorical = ["site"]
//! labels = ["setosa", "versicolor", "virginica"]   # optional
//! ```
//!
//! Without `labels`, classification targets must already be class indices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GateError, Result};
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub features: Vec<FeatureColumn>,
    pub target: String,
    pub task: Task,
    /// Target spellings for each class index, when targets are not indices.
    pub labels: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    task: String,
    target: String,
    classes: Option<usize>,
    #[serde(default)]
    numeric: Vec<String>,
    #[serde(default)]
    categorical: Vec<String>,
    labels: Option<Vec<String>>,
}

impl DatasetSchema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GateError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            GateError::Data(msg) => GateError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| GateError::Data(format!("schema: {e}")))?;
        let task = match (file.task.as_str(), file.classes, &file.labels) {
            ("binary", None | Some(2), _) => Task::Binary,
            ("regression", None, None) => Task::Regression,
            ("multiclass", Some(k), _) => Task::Multiclass(k),
            ("multiclass", None, Some(labels)) => Task::Multiclass(labels.len()),
            (other, classes, _) => {
                return Err(GateError::Data(format!(
                    "schema: unsupported task {other:?} with classes {classes:?}"
                )))
            }
        };
        let features: Vec<FeatureColumn> = file
            .numeric
            .into_iter()
            .map(|name| FeatureColumn {
                name,
                kind: FeatureKind::Numeric,
            })
            .chain(file.categorical.into_iter().map(|name| FeatureColumn {
                name,
                kind: FeatureKind::Categorical,
            }))
            .collect();
        let schema = DatasetSchema {
            features,
            target: file.target,
            task,
            labels: file.labels,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(GateError::Data("schema declares no feature columns".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.features.iter().map(|f| &f.name).chain([&self.target]) {
            if !seen.insert(name) {
                return Err(GateError::Data(format!("schema names column {name:?} twice")));
            }
        }
        if let Task::Multiclass(k) = self.task {
            if k < 2 {
                return Err(GateError::Data(format!("multiclass schema needs at least 2 classes, got {k}")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.task.classes() {
                return Err(GateError::Data(format!(
                    "schema lists {} labels for {} classes",
                    labels.len(),
                    self.task.classes()
                )));
            }
        }
        Ok(())
    }

    pub fn numeric(&self) -> impl Iterator<Item = &str> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Numeric)
            .map(|f| f.name.as_str())
    }

    pub fn categorical(&self) -> impl Iterator<Item = &str> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
            .map(|f| f.name.as_str())
    }
}
