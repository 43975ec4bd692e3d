//! Numeric substrate: matrices, reverse-mode differentiation, multilayer
//! perceptrons, losses, optimizers and the training loop.

pub mod dataset;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod tape;
pub mod train;

pub use dataset::{Dataset, Task};
pub use loss::LossKind;
pub use matrix::Matrix;
pub use mlp::{Activation, Init, Layer, Mlp};
pub use optim::{EarlyStop, EarlyStopping, OptimConfig, OptimKind, Optimizer};
pub use tape::{Tape, Var};
pub use train::{train, BatchSampler};
