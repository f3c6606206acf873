//! Minibatch gradient descent.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::{init_model, Arch};
use super::backprop::loss_and_gradients;
use super::sparsity::SparsityMask;
use crate::error::{Error, Result};
use crate::model::{Dataset, Model};
use crate::rng::{stream_rng, streams};
use crate::tensor::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Gaussian, variance `2 / fan_in`.
    #[default]
    He,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCfg {
    pub seed: u64,
    /// Step size γ; gradients are summed, not averaged, over a batch.
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub init: InitScheme,
    pub precision: Precision,
}

impl Default for TrainCfg {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 0.005,
            batch_size: 16,
            epochs: 20,
            weight_decay: 0.0,
            init: InitScheme::He,
            precision: Precision::F64,
        }
    }
}

impl TrainCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub model: Model,
    /// Summed loss over the batch before the update.
    pub loss: f64,
}

/// `ζ ← ζ − γ·(Σ_batch ∇L + λ·ζ)` on every trainable tensor. Masked
/// positions are left untouched.
pub fn sgd_step(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    lr: f64,
    weight_decay: f64,
    mask: Option<&SparsityMask>,
) -> Result<Step> {
    step_at(model, data, batch, lr, weight_decay, mask, 0)
}

fn step_at(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    lr: f64,
    weight_decay: f64,
    mask: Option<&SparsityMask>,
    step: usize,
) -> Result<Step> {
    if batch.is_empty() {
        return Err(Error::Dataset("gradient step on an empty batch".into()));
    }
    let (loss, grads) = loss_and_gradients(model, data, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let mut tensors = model.tensors().clone();
    for (name, g) in grads {
        let t = tensors.get_mut(&name).expect("trainable tensor exists");
        let keep = mask.and_then(|m| m.get(&name));
        for (j, (w, gj)) in t.data_mut().iter_mut().zip(g).enumerate() {
            if keep.is_some_and(|k| !k[j]) {
                continue;
            }
            *w -= lr * (gj + weight_decay * *w);
        }
    }
    if tensors.values().any(|t| t.data().iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFiniteLoss { step });
    }
    Ok(Step {
        model: model.with_tensors(tensors)?,
        loss,
    })
}

/// Continues training `model` for `cfg.epochs` epochs with shuffled minibatches.
pub fn train_from(
    model: Model,
    data: &Dataset,
    cfg: &TrainCfg,
    mask: Option<&SparsityMask>,
) -> Result<Model> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let mut rng = stream_rng(cfg.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut model = model;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            model = step_at(&model, data, batch, cfg.lr, cfg.weight_decay, mask, step)?.model;
            step += 1;
        }
    }
    Ok(model)
}

/// Initializes `arch` from `cfg.seed` and trains it.
pub fn train(arch: &Arch, data: &Dataset, cfg: &TrainCfg) -> Result<Model> {
    let model = init_model(arch, cfg.seed, cfg.precision)?;
    if model.classes() < data.classes() {
        return Err(Error::Dataset(format!(
            "architecture predicts {} classes, data has {}",
            model.classes(),
            data.classes()
        )));
    }
    train_from(model, data, cfg, None)
}

/// Fraction of samples whose plain forward-pass argmax matches the label.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    let mut correct = 0;
    for (x, &y) in data.inputs().iter().zip(data.labels()) {
        let scores = crate::engine::forward(model, x)?;
        correct += usize::from(crate::engine::top1(scores.data()) == y);
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gen_blobs;

    #[test]
    fn zero_lr_step_is_identity() {
        let arch: Arch = "mlp:4-8-3".parse().unwrap();
        let m = init_model(&arch, 1, Precision::F64).unwrap();
        let data = gen_blobs(1, 12, 4, 3, 1.0).unwrap();
        let s = sgd_step(&m, &data, &[0, 1, 2], 0.0, 0.0, None).unwrap();
        assert_eq!(s.model, m);
    }

    #[test]
    fn loss_decreases_on_blobs() {
        let arch: Arch = "mlp:4-16-3".parse().unwrap();
        let data = gen_blobs(2, 60, 4, 3, 0.5).unwrap();
        let mut m = init_model(&arch, 2, Precision::F64).unwrap();
        let all: Vec<usize> = (0..data.len()).collect();
        let first = sgd_step(&m, &data, &all, 0.005, 0.0, None).unwrap().loss;
        let mut last = first;
        for _ in 0..50 {
            let s = sgd_step(&m, &data, &all, 0.005, 0.0, None).unwrap();
            last = s.loss;
            m = s.model;
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn training_is_deterministic_and_zero_epochs_is_init() {
        let arch: Arch = "mlp:4-8-3".parse().unwrap();
        let data = gen_blobs(3, 30, 4, 3, 1.0).unwrap();
        let cfg = TrainCfg {
            epochs: 2,
            ..TrainCfg::default()
        };
        assert_eq!(train(&arch, &data, &cfg).unwrap(), train(&arch, &data, &cfg).unwrap());
        let zero = TrainCfg { epochs: 0, ..cfg };
        assert_eq!(
            train(&arch, &data, &zero).unwrap(),
            init_model(&arch, 0, Precision::F64).unwrap()
        );
    }

    #[test]
    fn diverging_training_reports_step() {
        let arch: Arch = "mlp:4-8-3".parse().unwrap();
        let data = gen_blobs(3, 30, 4, 3, 1.0).unwrap();
        let cfg = TrainCfg {
            lr: 1e200,
            epochs: 3,
            ..TrainCfg::default()
        };
        assert!(matches!(train(&arch, &data, &cfg), Err(Error::NonFiniteLoss { .. })));
    }
}
