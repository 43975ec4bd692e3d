//! Sinkhorn re-basin: aligning multilayer perceptrons through their
//! permutation symmetries with a differentiable Sinkhorn relaxation.
//!
//! - [`nn`]: matrices, reverse-mode tape, MLPs, losses, optimizers, training.
//! - [`sinkhorn`]: the Sinkhorn operator, its gradients, Hungarian rounding.
//! - [`rebasin`]: transport plans, alignment costs, plan optimization, weight matching.
//! - [`lmc`]: cost curves along linear paths, barrier and AUC.
//! - [`continual`]: re-basin incremental learning and its baselines.
//! - [`data`]: polynomial tasks, IDX files, rotated image streams.
//! - [`checkpoint`]: JSON container for models and plans.

pub mod checkpoint;
pub mod continual;
pub mod data;
pub mod error;
pub mod lmc;
pub mod nn;
pub mod rebasin;
pub mod sinkhorn;

pub use error::{Error, Result};
