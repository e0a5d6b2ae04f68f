use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GateError;

/// What the model predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multiclass(usize),
    Regression,
}

impl Task {
    /// Width of the model output: 1 for binary and regression, K otherwise.
    pub fn output_units(self) -> usize {
        match self {
            Task::Multiclass(k) => k,
            Task::Binary | Task::Regression => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }

    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass(k) => k,
            Task::Regression => 0,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Binary => f.write_str("binary"),
            Task::Multiclass(k) => write!(f, "multiclass({k})"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

/// `binary`, `regression`, or `multiclass:K` (also `multiclass(K)`).
impl FromStr for Task {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self, GateError> {
        let bad = || GateError::InvalidConfig(vec![format!("task: expected binary, regression or multiclass:K, got {s:?}")]);
        match s.trim() {
            "binary" => Ok(Task::Binary),
            "regression" => Ok(Task::Regression),
            other => {
                let k = other
                    .strip_prefix("multiclass")
                    .map(|rest| rest.trim_start_matches([':', '(']).trim_end_matches(')'))
                    .ok_or_else(bad)?;
                match k.parse::<usize>() {
                    Ok(k) if k >= 2 => Ok(Task::Multiclass(k)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for t in [Task::Binary, Task::Regression, Task::Multiclass(4)] {
            assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
        }
        assert_eq!("multiclass:3".parse::<Task>().unwrap(), Task::Multiclass(3));
        assert!("multiclass:1".parse::<Task>().is_err());
        assert!("ranking".parse::<Task>().is_err());
    }
}
