//! Desk-scale inference engine with dynamic pruning of exchangeable partial sums.
//!
//! A ReLU neuron or a top-1 prediction head reduces `n` exchangeable terms.
//! The engine computes the terms in a fixed order, and after `k` of them asks
//! a confidence predicate whether the outcome is already decided (the neuron
//! will be negative, the current winner will stay on top). If so the remaining
//! terms are never computed.

pub mod engine;
pub mod error;
pub mod lab;
pub mod model;
pub mod ops;
pub mod predict;
pub mod report;
pub mod rng;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use engine::{evaluate, PruneConfig, RunReport};
pub use error::{Error, Result};
pub use model::{Dataset, LayerKind, LayerSpec, Model, ModelMeta, Split};
pub use tensor::{Precision, Real, Tensor};
