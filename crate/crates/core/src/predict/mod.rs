//! Confidence predicates deciding, from a prefix of exchangeable terms,
//! whether the rest of a reduction can be skipped.

pub mod head;
pub mod normal;
pub mod relu;
pub mod stats;

pub use head::{
    argmax, dominance_statstest, dominance_threshold, holm_bonferroni, rank_classes,
    rival_p_value, ClassScoreStats, RivalStats,
};
pub use normal::{inv_normal_cdf, normal_cdf};
pub use relu::{
    fold_affine, statstest_predict, threshold_predict, Affine, Schedule, StatsTestRule,
};
pub use stats::PartialStats;
