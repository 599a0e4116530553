//! Knowledge tracing engine that predicts student responses from
//! interaction logs.
//!
//! Exercises are split into correct/incorrect interaction nodes and
//! embedded through two graph views: a concept hypergraph grouping
//! interactions that share a skill, and a directed transition graph of
//! consecutive attempts. A GRU tracks each student over time per branch,
//! and a gated ensemble of the two branches is trained jointly with them
//! through online distillation. Everything runs on a small built-in
//! reverse-mode autodiff engine, so the crate has no tensor framework
//! dependencies.
//!
//! Training typically runs in `f32`; gradient checking uses `f64`. The
//! [`Model32`]/[`Model64`] aliases pick the precision.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diff;
pub mod distill;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod model;
pub mod scalar;
pub mod sequence;
pub mod sparse;
pub mod synthetic;
pub mod train;

pub use config::{TrainConfig, Variant};
pub use error::{DgektError, Result};
pub use model::DgektModel;
pub use scalar::{Dtype, Scalar};
pub use train::{evaluate_auc, train, EvalReport};

/// Training-precision model.
pub type Model32 = model::DgektModel<f32>;
/// Double-precision model, used for gradient verification.
pub type Model64 = model::DgektModel<f64>;
pub type Tensor32 = diff::Tensor<f32>;
pub type Tensor64 = diff::Tensor<f64>;
