//! Model manufacturing: initialization, gradient descent and magnitude pruning.

pub mod arch;
pub mod backprop;
mod sgd;
mod sparsity;

pub use arch::{init_model, Arch, ConvBlock};
pub use backprop::{cross_entropy, loss_and_gradients, trainable_tensors};
pub use sgd::{accuracy, sgd_step, train, train_from, InitScheme, Step, TrainCfg};
pub use sparsity::{
    iterative_magnitude_prune, magnitude_prune_scoped, magnitude_prune_step, prune_count,
    sort_channels_by_cost, PruneScope, SparsityMask,
};
