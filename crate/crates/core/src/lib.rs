//! Typicality-weighted loss minimization for classifier training.
//!
//! Each training sample carries a weight derived from how typical it looks,
//! either from an external one-class SVM density score or from the
//! classifier's own softmax output. The weights scale the per-sample terms of
//! a softmax-log or multi-class structured hinge loss, and a small
//! feed-forward classifier is trained on the weighted objective with SGD.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar type for the common cases. The experiment
//! harness in [`experiment`] runs in `f64`.
//!
//! Module map:
//!
//! - [`data`]: samples, datasets, CSV ingestion and standardization.
//! - [`kernel`], [`ocsvm`]: one-class SVM scorer (external typicality).
//! - [`internal`]: typicality read off the classifier's own softmax.
//! - [`weighting`]: typicality score to per-sample loss weight.
//! - [`loss`]: weighted softmax-log and multi-class hinge losses.
//! - [`mlp`], [`train`]: the classifier and its SGD trainer.
//! - [`synth`]: synthetic class clouds with typical/atypical test splits.
//! - [`experiment`], [`plot`]: sweep orchestration, tables and SVG plots.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod internal;
pub mod kernel;
pub mod loss;
pub mod mlp;
pub mod ocsvm;
pub mod plot;
pub mod scalar;
pub mod stats;
pub mod synth;
pub mod train;
pub mod weighting;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Sample64 = data::Sample<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type OneClassSvm64 = ocsvm::OneClassSvmModel<f64>;
pub type Mlp64 = mlp::MlpModel<f64>;
pub type WeightTable64 = weighting::WeightTable<f64>;

pub type Sample32 = data::Sample<f32>;
pub type Dataset32 = data::Dataset<f32>;
pub type OneClassSvm32 = ocsvm::OneClassSvmModel<f32>;
pub type Mlp32 = mlp::MlpModel<f32>;
pub type WeightTable32 = weighting::WeightTable<f32>;
