//! Streaming evaluation of one ReLU reduction with an early-exit predicate.

use super::config::{ReluPredictorCfg, ReluPredictorKind};
use super::flops::{statstest_check_flops, LayerTally, THRESHOLD_CHECK_FLOPS};
use crate::error::Result;
use crate::ops::relu0;
use crate::predict::{fold_affine, threshold_predict, Affine, PartialStats, Schedule, StatsTestRule};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    Threshold(f64),
    StatsTest(StatsTestRule),
}

/// A compiled ReLU predicate: rule, check position and schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronPredicate {
    rule: Rule,
    k: usize,
    schedule: Schedule,
}

impl NeuronPredicate {
    /// `None` for a disabled predictor.
    pub fn from_cfg(cfg: &ReluPredictorCfg) -> Result<Option<Self>> {
        let rule = match cfg.kind {
            ReluPredictorKind::None => return Ok(None),
            ReluPredictorKind::Threshold { t } => Rule::Threshold(t),
            ReluPredictorKind::StatsTest { alpha } => Rule::StatsTest(StatsTestRule::new(alpha)?),
        };
        Ok(Some(Self {
            rule,
            k: cfg.k,
            schedule: cfg.schedule,
        }))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn fires(&self, consumed: usize, n: usize) -> bool {
        self.schedule.fires(consumed, self.k, n)
    }

    /// FLOPs of a check after `consumed` terms.
    #[inline]
    pub fn check_flops(&self, consumed: usize) -> u64 {
        match self.rule {
            Rule::Threshold(_) => THRESHOLD_CHECK_FLOPS,
            Rule::StatsTest(_) => statstest_check_flops(consumed),
        }
    }

    /// Position of the last check for a reduction over `n` terms (0 if none fires).
    pub fn last_check(&self, n: usize) -> usize {
        match self.schedule {
            Schedule::OnceAtK if self.k < n => self.k,
            Schedule::OnceAtK => 0,
            Schedule::EveryK => (n - 1) / self.k * self.k,
        }
    }

    /// Total predictor FLOPs spent on a reduction over `n` terms that is never pruned.
    pub fn overhead(&self, n: usize) -> u64 {
        (1..n)
            .filter(|&c| self.fires(c, n))
            .map(|c| self.check_flops(c))
            .sum()
    }

    #[inline]
    fn decide(&self, stats: &PartialStats) -> Result<bool> {
        match &self.rule {
            Rule::Threshold(t) => Ok(threshold_predict(stats, *t)),
            Rule::StatsTest(rule) => rule.decide(stats),
        }
    }
}

/// How a streamed reduction ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeuronOutcome<T> {
    /// All terms were consumed; `sum` is their plain sum.
    Complete { sum: T },
    /// The predicate fired after `consumed` terms. `full` carries the sum
    /// over all terms when it was computed for diagnostics.
    Pruned { consumed: usize, full: Option<T> },
}

/// Accumulates `term(0..n)` in order, charging `costs[pos]` per term to the
/// MAC counter and consulting `pred` at its check positions. With `shadow`
/// set, pruned reductions are finished without charge so callers can count
/// mispredictions.
#[inline]
pub(crate) fn stream_neuron<T: Real>(
    n: usize,
    mut term: impl FnMut(usize) -> T,
    costs: &[u64],
    pred: Option<&NeuronPredicate>,
    affine: &Affine,
    shadow: bool,
    tally: &mut LayerTally,
) -> Result<NeuronOutcome<T>> {
    tally.outputs += 1;
    let mut acc = T::zero();
    let Some(p) = pred else {
        for (pos, &c) in costs.iter().enumerate().take(n) {
            acc += term(pos);
            tally.flops.mac += c;
        }
        return Ok(NeuronOutcome::Complete { sum: acc });
    };
    let last = p.last_check(n);
    let mut stats = PartialStats::default();
    for (pos, &cost) in costs.iter().enumerate().take(n) {
        let x = term(pos);
        acc += x;
        tally.flops.mac += cost;
        if pos < last {
            stats.push(fold_affine(x.as_f64(), affine));
            let consumed = pos + 1;
            if p.fires(consumed, n) {
                tally.checks += 1;
                tally.flops.predictor += p.check_flops(consumed);
                if p.decide(&stats)? {
                    tally.prunes += 1;
                    tally.terms_computed += consumed as u64;
                    tally.terms_total += n as u64;
                    let full = shadow.then(|| {
                        let mut f = acc;
                        for q in consumed..n {
                            f += term(q);
                        }
                        f
                    });
                    return Ok(NeuronOutcome::Pruned { consumed, full });
                }
            }
        }
    }
    Ok(NeuronOutcome::Complete { sum: acc })
}

/// `ReLU(w·Σξᵢ + b)` over an ordered term stream, skipping the tail when the
/// configured predicate is confident the result is 0. Every term costs
/// `term_flops`; prune events, predictor FLOPs and (in shadow mode, when the
/// full argument turns out non-negative) mispredictions go to `tally`.
pub fn eval_neuron_exprune(
    terms: &[f64],
    cfg: &ReluPredictorCfg,
    affine: &Affine,
    term_flops: u64,
    shadow: bool,
    tally: &mut LayerTally,
) -> Result<f64> {
    let pred = NeuronPredicate::from_cfg(cfg)?;
    let costs = vec![term_flops; terms.len()];
    let outcome = stream_neuron(
        terms.len(),
        |i| terms[i],
        &costs,
        pred.as_ref(),
        affine,
        shadow,
        tally,
    )?;
    let arg = |s: f64| affine.w * s + affine.b;
    Ok(match outcome {
        NeuronOutcome::Complete { sum } => relu0(arg(sum)),
        NeuronOutcome::Pruned { full, .. } => {
            if full.is_some_and(|f| arg(f) >= 0.0) {
                tally.mispredicts += 1;
            }
            0.0
        }
    })
}
