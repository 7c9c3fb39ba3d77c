//! Scene-graph anticipation on symbolic video annotations.
//!
//! The pipeline: per-frame object features are contextualized by attention
//! encoders, fused into per-pair relationship representations, and the last
//! observed representation is carried forward in time either by a learned
//! ODE/SDE vector field (integrated with fixed-step solvers) or by an
//! autoregressive transformer baseline. Decoding heads turn anticipated
//! representations into predicate distributions that are scored with
//! Recall@K / meanRecall@K against ground-truth future graphs.
//!
//! Everything differentiable runs on the tape in [`tape`]; the math is
//! generic over the scalar type so the same code paths run in f32 for
//! training and in f64 for finite-difference reference checks.

pub mod anticipator;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dynamics;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod grad_check;
pub mod graph;
pub mod heads;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{SgaError, SgaResult};
pub use scalar::Scalar;

/// Storage scalar for training, checkpoints, and the CLI path.
pub type Real = f32;
/// Tensor in storage precision.
pub type Tensor = tensor::Tensor<Real>;
/// Tape in storage precision.
pub type Tape = tape::Tape<Real>;
/// 64-bit tensor, used by gradient-check reference passes.
pub type Tensor64 = tensor::Tensor<f64>;
/// 64-bit tape, used by gradient-check reference passes.
pub type Tape64 = tape::Tape<f64>;
