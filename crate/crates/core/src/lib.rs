//! Gated additive tree ensembles for tabular data.
//!
//! The model stacks gated feature learning units over the raw features,
//! feeds the learned representation to an ensemble of differentiable
//! non-linear decision trees, re-weights the tree outputs with self-attention
//! and mixes per-tree heads additively. Everything is differentiated by the
//! small reverse-mode engine in [`tensor`].

pub mod accounting;
pub mod activations;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dndt;
pub mod ensemble;
pub mod error;
pub mod gflu;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod task;
pub mod tensor;
pub mod train;

pub use activations::ActivationFamily;
pub use config::{Preset, TrainConfig};
pub use ensemble::{ModelParams, ModelSpec};
pub use error::{GateError, Result};
pub use task::Task;
pub use tensor::Tensor;
