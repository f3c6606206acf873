//! Global magnitude pruning of convolution kernels and cost-ordered channels.

use std::collections::BTreeMap;

use crate::engine::{cost_order, input_channel_nonzeros, prunable_layers};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

use super::sgd::{train_from, TrainCfg};
use crate::model::{Dataset, LayerKind, Model};

/// Per-tensor keep flags; `false` positions hold exactly zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SparsityMask {
    masks: BTreeMap<String, Vec<bool>>,
}

impl SparsityMask {
    /// Keeps everything in every convolution kernel of `model`.
    pub fn dense(model: &Model) -> Self {
        Self {
            masks: model
                .conv_kernels()
                .into_iter()
                .map(|n| (n.to_string(), vec![true; model.tensor(n).expect("kernel").len()]))
                .collect(),
        }
    }

    pub fn get(&self, tensor: &str) -> Option<&[bool]> {
        self.masks.get(tensor).map(Vec::as_slice)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[bool])> {
        self.masks.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Fraction of masked positions that are kept.
    pub fn density(&self) -> f64 {
        let total: usize = self.masks.values().map(Vec::len).sum();
        let kept: usize = self.masks.values().flatten().filter(|k| **k).count();
        kept as f64 / total.max(1) as f64
    }

    /// True iff every masked position of `model` is exactly zero.
    pub fn holds_for(&self, model: &Model) -> bool {
        self.masks.iter().all(|(name, keep)| {
            model.tensor(name).is_some_and(|t| {
                t.data()
                    .iter()
                    .zip(keep)
                    .all(|(w, k)| *k || *w == 0.0)
            })
        })
    }
}

/// Number of weights removed when pruning `fraction` of `nonzero`: the
/// ceiling of the product, or none when the product is below one half.
pub fn prune_count(fraction: f64, nonzero: usize) -> usize {
    let target = fraction * nonzero as f64;
    if target < 0.5 {
        0
    } else {
        ((target - 1e-9).ceil() as usize).min(nonzero)
    }
}

/// Which weights compete for removal in one pruning step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    /// One ranking across every convolution kernel.
    #[default]
    Global,
    /// Each kernel loses `fraction` of its own nonzeros.
    PerLayer,
}

/// Zeroes the `fraction` of currently nonzero weights with the smallest
/// magnitude, ranked jointly across all convolution kernels. Ties go to the
/// lexicographically smaller tensor name, then the lower flat index. The
/// returned mask also keeps everything `prior` had already removed.
pub fn magnitude_prune_step(
    model: &Model,
    fraction: f64,
    prior: Option<&SparsityMask>,
) -> Result<(Model, SparsityMask)> {
    magnitude_prune_scoped(model, fraction, prior, PruneScope::Global)
}

pub fn magnitude_prune_scoped(
    model: &Model,
    fraction: f64,
    prior: Option<&SparsityMask>,
    scope: PruneScope,
) -> Result<(Model, SparsityMask)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain {
            value: fraction,
            domain: "(0, 1)",
        });
    }
    let mut mask = prior.cloned().unwrap_or_else(|| SparsityMask::dense(model));
    let kernels = model.conv_kernels();
    let pools: Vec<Vec<&str>> = match scope {
        PruneScope::Global => vec![kernels],
        PruneScope::PerLayer => kernels.into_iter().map(|k| vec![k]).collect(),
    };
    let mut tensors = model.tensors().clone();
    for pool in pools {
        let mut candidates: Vec<(f64, &str, usize)> = Vec::new();
        for name in pool {
            let t = model.tensor(name).expect("kernel");
            candidates.extend(
                t.data()
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(i, w)| (w.abs(), name, i)),
            );
        }
        let count = prune_count(fraction, candidates.len());
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        for &(_, name, i) in &candidates[..count] {
            tensors.get_mut(name).expect("kernel").data_mut()[i] = 0.0;
            mask.masks.get_mut(name).expect("kernel mask")[i] = false;
        }
    }
    Ok((model.with_tensors(tensors)?, mask))
}

/// `iters` rounds of magnitude pruning, each followed by `finetune` training
/// with the mask held fixed. Round `i` trains with seed `finetune.seed + i`.
pub fn iterative_magnitude_prune(
    model: &Model,
    data: &Dataset,
    fraction: f64,
    iters: usize,
    finetune: &TrainCfg,
    scope: PruneScope,
) -> Result<(Model, SparsityMask)> {
    let mut model = model.clone();
    let mut mask = SparsityMask::dense(&model);
    for i in 0..iters {
        let (pruned, m) = magnitude_prune_scoped(&model, fraction, Some(&mask), scope)?;
        mask = m;
        let cfg = TrainCfg {
            seed: finetune.seed.wrapping_add(i as u64),
            ..finetune.clone()
        };
        model = train_from(pruned, data, &cfg, Some(&mask))?;
    }
    Ok((model, mask))
}

/// For every prunable layer (and the prediction head), input channels in
/// ascending order of their nonzero weight count; ties keep index order.
pub fn sort_channels_by_cost(model: &Model) -> BTreeMap<String, Vec<usize>> {
    let prunable = prunable_layers(model);
    model
        .layers()
        .iter()
        .filter(|l| {
            prunable.contains(&l.name) || matches!(l.kind, LayerKind::PredictionHead { .. })
        })
        .map(|l| {
            let counts = input_channel_nonzeros(&l.kind, model.weight(l, 0));
            (l.name.clone(), cost_order(&counts))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use crate::train::arch::{init_model, Arch};

    fn cnn() -> Model {
        init_model(&"cnn:3x4x4-c4-c5b-2".parse::<Arch>().unwrap(), 11, Precision::F64).unwrap()
    }

    #[test]
    fn counting_rule() {
        assert_eq!(prune_count(0.05, 5), 0);
        assert_eq!(prune_count(0.05, 10), 1);
        assert_eq!(prune_count(0.05, 25), 2);
        assert_eq!(prune_count(0.05, 40), 2);
        assert_eq!(prune_count(0.5, 3), 2);
    }

    #[test]
    fn ties_break_by_name_then_index() {
        let m = cnn();
        let mut t = m.tensors().clone();
        for name in ["conv1.weight", "conv2.weight"] {
            t.get_mut(name).unwrap().data_mut().fill(0.5);
        }
        let m = m.with_tensors(t).unwrap();
        let total = 4 * 3 * 9 + 5 * 4 * 9;
        let (p, mask) = magnitude_prune_step(&m, 0.1, None).unwrap();
        let removed = prune_count(0.1, total);
        assert_eq!(removed, 29);
        let k1 = p.tensor("conv1.weight").unwrap().data();
        assert!(k1[..removed].iter().all(|w| *w == 0.0));
        assert!(k1[removed..].iter().all(|w| *w == 0.5));
        assert_eq!(p.tensor("conv2.weight").unwrap().count_nonzero(), 180);
        assert!(mask.holds_for(&p));
        // Dense layers are untouched.
        assert_eq!(p.tensor("head.weight"), m.tensor("head.weight"));
    }

    #[test]
    fn repeated_steps_compound_density() {
        let mut m = cnn();
        let mut mask = SparsityMask::dense(&m);
        for _ in 0..10 {
            let (next, nm) = magnitude_prune_step(&m, 0.05, Some(&mask)).unwrap();
            m = next;
            mask = nm;
        }
        let expected = 0.95f64.powi(10);
        assert!((mask.density() - expected).abs() < 0.02, "{}", mask.density());
        assert!(mask.holds_for(&m));
    }

    #[test]
    fn per_layer_scope_prunes_each_kernel() {
        let m = cnn();
        let (p, _) = magnitude_prune_scoped(&m, 0.1, None, PruneScope::PerLayer).unwrap();
        assert_eq!(p.tensor("conv1.weight").unwrap().count_nonzero(), 108 - prune_count(0.1, 108));
        assert_eq!(p.tensor("conv2.weight").unwrap().count_nonzero(), 180 - prune_count(0.1, 180));
    }

    #[test]
    fn iterative_pruning_keeps_mask_through_finetuning() {
        let m = cnn();
        let data = crate::model::gen_blob_images(1, 24, [3, 4, 4], 2, 1.0).unwrap();
        let cfg = TrainCfg { epochs: 1, batch_size: 8, ..TrainCfg::default() };
        let (p, mask) = iterative_magnitude_prune(&m, &data, 0.05, 3, &cfg, PruneScope::Global).unwrap();
        assert!(mask.holds_for(&p));
        assert!(mask.density() < 0.9 && mask.density() > 0.8);
        assert_ne!(p.tensor("head.weight"), m.tensor("head.weight"));
    }

    #[test]
    fn tiny_fraction_changes_nothing() {
        let m = cnn();
        let (p, mask) = magnitude_prune_step(&m, 1e-4, None).unwrap();
        assert_eq!(p, m);
        assert_eq!(mask.density(), 1.0);
        assert!(magnitude_prune_step(&m, 0.0, None).is_err());
    }

    #[test]
    fn channel_orders() {
        let m = cnn();
        let tables = sort_channels_by_cost(&m);
        assert_eq!(tables["conv1"], vec![0, 1, 2]);
        assert_eq!(tables["head"].len(), 5);
        let mut t = m.tensors().clone();
        let k = t.get_mut("conv2.weight").unwrap();
        // Zero out input channel 1 entirely and most of channel 3.
        for co in 0..5 {
            for tap in 0..9 {
                k.data_mut()[(co * 4 + 1) * 9 + tap] = 0.0;
                if tap > 0 {
                    k.data_mut()[(co * 4 + 3) * 9 + tap] = 0.0;
                }
            }
        }
        let m = m.with_tensors(t).unwrap();
        assert_eq!(sort_channels_by_cost(&m)["conv2"], vec![1, 3, 0, 2]);
    }
}
