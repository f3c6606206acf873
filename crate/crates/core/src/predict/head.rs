//! Dominance prediction for top-1 prediction heads.
//!
//! Every term is a vector of per-class score increments. After `k` terms the
//! current winner is compared with the classes at selected ranks; if it
//! dominates them the remaining terms are skipped.

use std::cmp::Ordering;

use super::normal::normal_cdf;
use super::stats::PartialStats;
use crate::error::{Error, Result};

/// Class indices ordered by descending score; ties keep the lower index first.
pub fn rank_classes(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// `argmax` with ties resolved towards the lower class index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// True iff `c₁ − cᵢ > Tᵢ` for every configured rank, where `thresholds[j]`
/// holds `T` for rank `j + 2`.
pub fn dominance_threshold(scores: &[f64], thresholds: &[f64]) -> bool {
    if thresholds.len() + 1 > scores.len() {
        return false;
    }
    let order = rank_classes(scores);
    let top = scores[order[0]];
    thresholds
        .iter()
        .enumerate()
        .all(|(j, &t)| top - scores[order[j + 1]] > t)
}

/// Statistics of the winner-minus-rival difference stream for one rival.
#[derive(Debug, Clone, PartialEq)]
pub struct RivalStats {
    pub rank: usize,
    pub class: usize,
    pub diff: PartialStats,
}

/// Running class scores and, for every tested rank, the difference stream
/// `ξᵢ[winner] − ξᵢ[rival]` over the consumed terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScoreStats {
    pub scores: Vec<f64>,
    pub winner: usize,
    pub rivals: Vec<RivalStats>,
}

impl ClassScoreStats {
    /// Builds the statistics from consumed per-class term vectors. `ranks`
    /// are 1-based positions in the current score order, each in `2..=C`.
    pub fn from_terms<'a>(
        terms: impl IntoIterator<Item = &'a [f64]> + Clone,
        classes: usize,
        ranks: &[usize],
    ) -> Result<Self> {
        let mut scores = vec![0.0; classes];
        for term in terms.clone() {
            if term.len() != classes {
                return Err(Error::Shape(format!(
                    "score term has {} entries, expected {classes}",
                    term.len()
                )));
            }
            for (s, &x) in scores.iter_mut().zip(term) {
                *s += x;
            }
        }
        let order = rank_classes(&scores);
        let winner = order[0];
        let rivals = ranks
            .iter()
            .map(|&rank| {
                if rank < 2 || rank > classes {
                    return Err(Error::Config(format!(
                        "tested rank {rank} outside 2..={classes}"
                    )));
                }
                let class = order[rank - 1];
                let diff = PartialStats::from_terms(terms.clone().into_iter().map(|t| t[winner] - t[class]));
                Ok(RivalStats { rank, class, diff })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scores,
            winner,
            rivals,
        })
    }
}

/// One-sided p-value that the winner does not beat the rival, from the
/// difference stream: `Φ(−√(S²/D))` when `S > 0`, else 1.
pub fn rival_p_value(diff: &PartialStats) -> Result<f64> {
    if diff.k < 2 {
        return Err(Error::Misuse(format!(
            "statistical test needs at least 2 terms, got {}",
            diff.k
        )));
    }
    if diff.sum <= 0.0 {
        return Ok(1.0);
    }
    let d = diff.dispersion();
    if d <= diff.dispersion_eps() {
        return Ok(0.0);
    }
    Ok(normal_cdf(-(diff.sum * diff.sum / d).sqrt()))
}

/// Holm's step-down procedure; true iff every hypothesis is rejected, i.e.
/// the `i`-th smallest p-value is at most `α / (m − i + 1)` for all `i`.
pub fn holm_bonferroni(pvalues: &[f64], alpha: f64) -> bool {
    if pvalues.is_empty() {
        return false;
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = sorted.len();
    sorted
        .iter()
        .enumerate()
        .all(|(i, &p)| p <= alpha / (m - i) as f64)
}

/// True iff the Holm-adjusted pairwise tests reject for every tested rival.
/// `alpha_overall == 0` never prunes.
pub fn dominance_statstest(stats: &ClassScoreStats, alpha_overall: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&alpha_overall) {
        return Err(Error::Domain {
            value: alpha_overall,
            domain: "[0, 1]",
        });
    }
    let pvalues = stats
        .rivals
        .iter()
        .map(|r| rival_p_value(&r.diff))
        .collect::<Result<Vec<_>>>()?;
    if alpha_overall == 0.0 {
        return Ok(false);
    }
    Ok(holm_bonferroni(&pvalues, alpha_overall))
}
