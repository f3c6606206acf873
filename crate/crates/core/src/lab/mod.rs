//! Empirical checks of parameter exchangeability: identical marginal
//! distributions across an ensemble, permutation symmetries of the network
//! function, and equivariance of a training step.

pub mod ensemble;
pub mod group;
pub mod stats;
pub mod symmetry;

pub use ensemble::{
    ensemble_samples, identical_distribution_report, identical_distribution_test, train_ensemble,
    with_index_bias, IdReport, IndexTest, Observable, MIN_ENSEMBLE,
};
pub use group::{check_permutation, permute_axis, GroupKind, GroupSpec, SliceRef};
pub use stats::{binomial_interval, kolmogorov_q, ks_two_sample};
pub use symmetry::{
    equivariance_check, gaussian_probes, random_permutation, symmetry_check, AttentionBlock,
    Equivariance, ResidualNet,
};
