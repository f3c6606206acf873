//! Ensembles of independently trained models and per-index identical
//! distribution tests over an exchangeable group.

use rayon::prelude::*;
use serde::Serialize;

use super::group::GroupSpec;
use super::stats::{binomial_interval, ks_two_sample};
use crate::engine::forward_all;
use crate::error::{Error, Result};
use crate::model::{Dataset, Model};
use crate::tensor::Tensor;
use crate::train::{train, Arch, TrainCfg};

/// Smallest ensemble the identical-distribution report accepts.
pub const MIN_ENSEMBLE: usize = 30;

/// Trains one model per seed `0..n` with otherwise identical settings.
pub fn train_ensemble(arch: &Arch, data: &Dataset, cfg: &TrainCfg, n: usize) -> Result<Vec<Model>> {
    (0..n as u64)
        .into_par_iter()
        .map(|seed| train(arch, data, &TrainCfg { seed, ..cfg.clone() }))
        .collect()
}

/// A scalar read off group index `i` of a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    /// Flat element `input` of the producer's weight slice `i`.
    IncomingWeight { input: usize },
    /// Element `output` of the consumer's weight slice `i` (first tap for conv).
    OutgoingWeight { output: usize },
    /// Mean output of unit/channel `i` of the producer on probe `probe`,
    /// before any nonlinearity.
    Activation { probe: usize },
}

impl Observable {
    /// One value per group index.
    pub fn extract(&self, model: &Model, group: &GroupSpec, probes: &[Tensor<f64>]) -> Result<Vec<f64>> {
        let producer = group
            .slices
            .first()
            .ok_or_else(|| Error::Config("group has no slices".into()))?;
        let n = group.size;
        match *self {
            Observable::IncomingWeight { input } => {
                let w = tensor(model, &producer.tensor)?;
                let per = w.len() / n;
                if input >= per {
                    return Err(Error::Config(format!(
                        "incoming index {input} out of range for {per} inputs"
                    )));
                }
                Ok((0..n).map(|i| w.data()[i * per + input]).collect())
            }
            Observable::OutgoingWeight { output } => {
                let consumer = group
                    .slices
                    .iter()
                    .find(|s| s.axis == 1)
                    .ok_or_else(|| Error::Config("group has no consumer slice".into()))?;
                let w = tensor(model, &consumer.tensor)?;
                let shape = w.shape();
                if output >= shape[0] {
                    return Err(Error::Config(format!(
                        "outgoing index {output} out of range for {} outputs",
                        shape[0]
                    )));
                }
                let taps: usize = shape[2..].iter().product();
                Ok((0..n).map(|i| w.data()[(output * shape[1] + i) * taps]).collect())
            }
            Observable::Activation { probe } => {
                let x = probes
                    .get(probe)
                    .ok_or_else(|| Error::Config(format!("probe {probe} out of range")))?;
                let (idx, _) = model
                    .layer(&group.layer)
                    .ok_or_else(|| Error::Config(format!("no layer `{}`", group.layer)))?;
                let acts = forward_all(model, model.tensors(), x)?;
                let out = &acts[idx + 1];
                let per = out.len() / n;
                Ok(out
                    .data()
                    .chunks(per)
                    .map(|c| c.iter().sum::<f64>() / per as f64)
                    .collect())
            }
        }
    }
}

fn tensor<'a>(model: &'a Model, name: &str) -> Result<&'a Tensor<f64>> {
    model
        .tensor(name)
        .ok_or_else(|| Error::Config(format!("model has no tensor `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexTest {
    pub index: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
}

/// Outcome of testing every group index against the rest of the group.
#[derive(Debug, Clone, PartialEq)]
pub struct IdReport {
    pub rows: Vec<IndexTest>,
    pub alpha: f64,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Central interval of rejection counts expected under the null.
    pub interval: (usize, usize),
    pub within: bool,
}

/// Tests, for each index `i`, the sample `samples[·][i]` against the pooled
/// samples of every other index with a two-sample KS test at level `alpha`,
/// and checks the rejection count against a `level` binomial interval.
/// `samples` has one row per ensemble member.
pub fn identical_distribution_test(samples: &[Vec<f64>], alpha: f64, level: f64) -> Result<IdReport> {
    if samples.len() < MIN_ENSEMBLE {
        return Err(Error::Config(format!(
            "ensemble of {} is below the minimum of {MIN_ENSEMBLE}",
            samples.len()
        )));
    }
    let size = samples[0].len();
    if size < 2 || samples.iter().any(|r| r.len() != size) {
        return Err(Error::Config("samples must be rectangular with at least two indices".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(level > 0.0 && level < 1.0) {
        return Err(Error::Config("alpha and level must lie in (0, 1)".into()));
    }
    let rows: Vec<IndexTest> = (0..size)
        .map(|i| {
            let own: Vec<f64> = samples.iter().map(|r| r[i]).collect();
            let rest: Vec<f64> = samples
                .iter()
                .flat_map(|r| r.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v))
                .collect();
            let (statistic, p_value) = ks_two_sample(&own, &rest);
            IndexTest {
                index: i,
                statistic,
                p_value,
                rejected: p_value < alpha,
            }
        })
        .collect();
    let rejections = rows.iter().filter(|r| r.rejected).count();
    let interval = binomial_interval(size, alpha, level);
    Ok(IdReport {
        rows,
        alpha,
        rejections,
        rejection_rate: rejections as f64 / size as f64,
        interval,
        within: rejections >= interval.0 && rejections <= interval.1,
    })
}

/// Reads `obs` off every ensemble member and runs the per-index test.
pub fn identical_distribution_report(
    models: &[Model],
    group_of: impl Fn(&Model) -> Result<GroupSpec>,
    obs: &Observable,
    probes: &[Tensor<f64>],
    alpha: f64,
    level: f64,
) -> Result<IdReport> {
    let samples = ensemble_samples(models, group_of, obs, probes)?;
    identical_distribution_test(&samples, alpha, level)
}

pub fn ensemble_samples(
    models: &[Model],
    group_of: impl Fn(&Model) -> Result<GroupSpec>,
    obs: &Observable,
    probes: &[Tensor<f64>],
) -> Result<Vec<Vec<f64>>> {
    models
        .iter()
        .map(|m| obs.extract(m, &group_of(m)?, probes))
        .collect()
}

/// Negative control: shifts index `i` by `scale · i` in every row, which
/// breaks identical distribution by construction.
pub fn with_index_bias(samples: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|r| r.iter().enumerate().map(|(i, v)| v + scale * i as f64).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::tensor::Precision;
    use crate::train::init_model;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iid(seed: u64, rows: usize, size: usize) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 7);
        (0..rows)
            .map(|_| (0..size).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn iid_samples_pass_and_shifted_samples_fail() {
        let s = iid(1, 40, 64);
        let r = identical_distribution_test(&s, 0.05, 0.99).unwrap();
        assert!(r.within, "{} rejections, interval {:?}", r.rejections, r.interval);
        let c = identical_distribution_test(&with_index_bias(&s, 10.0), 0.05, 0.99).unwrap();
        assert!(!c.within);
        assert!(c.rejection_rate > 0.9);
    }

    #[test]
    fn small_ensembles_are_refused() {
        assert!(identical_distribution_test(&iid(1, 29, 8), 0.05, 0.99).is_err());
    }

    #[test]
    fn observables_read_the_right_slices() {
        let m = init_model(&"mlp:3-4-2".parse::<Arch>().unwrap(), 0, Precision::F64).unwrap();
        let g = GroupSpec::hidden(&m, "fc1").unwrap();
        let w = m.tensor("fc1.weight").unwrap();
        let inc = Observable::IncomingWeight { input: 2 }.extract(&m, &g, &[]).unwrap();
        assert_eq!(inc, (0..4).map(|i| w.at(&[i, 2])).collect::<Vec<_>>());
        let h = m.tensor("head.weight").unwrap();
        let out = Observable::OutgoingWeight { output: 1 }.extract(&m, &g, &[]).unwrap();
        assert_eq!(out, (0..4).map(|i| h.at(&[1, i])).collect::<Vec<_>>());
        let x = Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap();
        let act = Observable::Activation { probe: 0 }.extract(&m, &g, std::slice::from_ref(&x)).unwrap();
        let b = m.tensor("fc1.bias").unwrap();
        for (i, a) in act.iter().enumerate() {
            let z: f64 = (0..3).map(|j| w.at(&[i, j]) * x.data()[j]).sum::<f64>() + b.data()[i];
            assert!((a - z).abs() < 1e-12);
        }
        assert!(Observable::IncomingWeight { input: 3 }.extract(&m, &g, &[]).is_err());
    }
}
