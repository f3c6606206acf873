//! Early negative prediction for ReLU neurons.
//!
//! A neuron computes `ReLU(w·Σξᵢ + b)` over `n` terms. Folding the affine
//! part into every term (`ξ̃ᵢ = w·ξᵢ + b/n`) turns this into `ReLU(Σξ̃ᵢ)`, so
//! both predicates only ever ask whether `Σξ̃ᵢ` will end up negative.

use serde::{Deserialize, Serialize};

use super::normal::inv_normal_cdf;
use super::stats::PartialStats;
use crate::error::{Error, Result};

/// Scale `w`, bias `b` and term count `n` around a neuron's partial sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub w: f64,
    pub b: f64,
    pub n: usize,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        Self { w: 1.0, b: 0.0, n }
    }
}

/// `w·ξ + b/n`.
#[inline]
pub fn fold_affine(xi: f64, affine: &Affine) -> f64 {
    affine.w * xi + affine.b / affine.n as f64
}

/// Prune when the partial sum of folded terms is below `k·T`.
#[inline]
pub fn threshold_predict(stats: &PartialStats, t: f64) -> bool {
    stats.k >= 1 && stats.sum < stats.k as f64 * t
}

/// Wald-style test that the mean of the folded terms is negative at level `alpha`.
///
/// With `D = k·Σξ̃² − (Σξ̃)²` the decision is
/// `Σξ̃ < 0 && (D ≈ 0 || (Σξ̃)²/D > Φ⁻¹(α)²)`.
pub fn statstest_predict(stats: &PartialStats, alpha: f64) -> Result<bool> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::Domain {
            value: alpha,
            domain: "(0, 0.5]",
        });
    }
    StatsTestRule::new(alpha)?.decide(stats)
}

/// [`statstest_predict`] with `Φ⁻¹(α)²` computed once.
///
/// `alpha == 0` is accepted as the never-prune sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsTestRule {
    alpha: f64,
    quantile_sq: f64,
}

impl StatsTestRule {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&alpha) {
            return Err(Error::Domain {
                value: alpha,
                domain: "[0, 0.5]",
            });
        }
        let quantile_sq = if alpha == 0.0 {
            f64::INFINITY
        } else {
            inv_normal_cdf(alpha)?.powi(2)
        };
        Ok(Self { alpha, quantile_sq })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn quantile_sq(&self) -> f64 {
        self.quantile_sq
    }

    #[inline]
    pub fn decide(&self, stats: &PartialStats) -> Result<bool> {
        if stats.k < 2 {
            return Err(Error::Misuse(format!(
                "statistical test needs at least 2 terms, got {}",
                stats.k
            )));
        }
        if self.alpha == 0.0 || stats.sum >= 0.0 {
            return Ok(false);
        }
        let d = stats.dispersion();
        if d <= stats.dispersion_eps() {
            return Ok(true);
        }
        Ok(stats.sum * stats.sum / d > self.quantile_sq)
    }
}

/// How often the predicate is consulted while terms stream in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Only after the k-th term.
    #[default]
    OnceAtK,
    /// After every k-th term.
    EveryK,
}

impl Schedule {
    /// Whether a check fires after consuming `consumed` of `n` terms.
    /// Checks never fire once all terms are in, since nothing is left to skip.
    #[inline]
    pub fn fires(&self, consumed: usize, k: usize, n: usize) -> bool {
        consumed < n
            && match self {
                Schedule::OnceAtK => consumed == k,
                Schedule::EveryK => consumed.is_multiple_of(k),
            }
    }

    pub fn check_count(&self, k: usize, n: usize) -> usize {
        match self {
            Schedule::OnceAtK => usize::from(k < n),
            Schedule::EveryK => (n - 1) / k,
        }
    }
}
