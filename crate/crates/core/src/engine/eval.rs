//! Dataset-level evaluation and run reports.

use rayon::prelude::*;

use super::config::PruneConfig;
use super::flops::{model_flops, FlopsLedger, LayerTally};
use super::plan::{Engine, SampleOutcome};
use crate::error::{Error, Result};
use crate::model::{Dataset, LayerKind, Model};
use crate::tensor::{Precision, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Complete pruned reductions off the books to count mispredictions.
    pub shadow: bool,
    /// Spread samples over the rayon pool.
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            shadow: false,
            parallel: true,
        }
    }
}

impl EvalOptions {
    pub fn shadow() -> Self {
        Self {
            shadow: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub name: String,
    pub kind: String,
    /// Predictor description, `-` where none applies.
    pub param: String,
    pub tally: LayerTally,
}

impl LayerReport {
    pub fn flops(&self) -> u64 {
        self.tally.flops.total()
    }

    pub fn prune_rate(&self) -> f64 {
        self.tally.prune_rate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRecord {
    pub index: usize,
    pub label: usize,
    pub pred: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub samples: usize,
    pub correct: usize,
    /// Top-1 accuracy.
    pub fidelity: f64,
    pub total_flops: u64,
    pub baseline_flops: u64,
    pub normalized_flops: f64,
    pub ledger: FlopsLedger,
    pub layers: Vec<LayerReport>,
    /// Mispredictions per prune; only meaningful for shadow runs.
    pub mispredict_rate: f64,
    pub records: Vec<SampleRecord>,
}

impl RunReport {
    pub fn layer(&self, name: &str) -> Option<&LayerReport> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.pred).collect()
    }

    pub fn prunes(&self) -> u64 {
        self.ledger.prunes()
    }

    pub fn mispredicts(&self) -> u64 {
        self.ledger.mispredicts()
    }
}

fn check_dataset(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    if dataset.classes() > model.classes() {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, model predicts {}",
            dataset.classes(),
            model.classes()
        )));
    }
    Ok(())
}

fn run_samples<T: Real>(
    model: &Model,
    dataset: &Dataset,
    cfg: &PruneConfig,
    opts: &EvalOptions,
) -> Result<Vec<SampleOutcome<T>>> {
    let engine = Engine::<T>::compile(model, cfg)?.with_shadow(opts.shadow);
    let one = |x: &crate::tensor::Tensor<f64>| engine.run(&x.cast::<T>());
    if opts.parallel {
        dataset.inputs().par_iter().map(one).collect()
    } else {
        dataset.inputs().iter().map(one).collect()
    }
}

fn layer_param(model: &Model, cfg: &PruneConfig, idx: usize) -> String {
    let layer = &model.layers()[idx];
    match layer.kind {
        LayerKind::PredictionHead { .. } => cfg
            .head
            .as_ref()
            .map_or_else(|| "none".to_string(), |h| h.to_string()),
        LayerKind::Dense { .. } | LayerKind::Conv2d { .. } => {
            cfg.layers.get(&layer.name).map_or_else(
                || "none".to_string(),
                |c| match c.disable_ratio {
                    Some(r) => format!("{}:r={r}", c.predictor),
                    None => c.predictor.to_string(),
                },
            )
        }
        _ => "-".to_string(),
    }
}

fn assemble<T>(
    model: &Model,
    dataset: &Dataset,
    cfg: &PruneConfig,
    outcomes: Vec<SampleOutcome<T>>,
    baseline_flops: u64,
) -> RunReport {
    let mut ledger = FlopsLedger::new(model.layers().len());
    let mut records = Vec::with_capacity(outcomes.len());
    let mut correct = 0;
    for (index, (out, &label)) in outcomes.iter().zip(dataset.labels()).enumerate() {
        ledger.merge(&out.ledger);
        correct += usize::from(out.class == label);
        records.push(SampleRecord {
            index,
            label,
            pred: out.class,
            flops: out.ledger.total(),
        });
    }
    let layers = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| LayerReport {
            name: l.name.clone(),
            kind: l.kind.tag().to_string(),
            param: layer_param(model, cfg, i),
            tally: ledger.layers[i],
        })
        .collect();
    let total = ledger.total();
    let prunes = ledger.prunes();
    let samples = outcomes.len();
    RunReport {
        samples,
        correct,
        fidelity: correct as f64 / samples as f64,
        total_flops: total,
        baseline_flops,
        normalized_flops: total as f64 / baseline_flops.max(1) as f64,
        mispredict_rate: if prunes == 0 {
            0.0
        } else {
            ledger.mispredicts() as f64 / prunes as f64
        },
        ledger,
        layers,
        records,
    }
}

fn evaluate_against(
    model: &Model,
    dataset: &Dataset,
    cfg: &PruneConfig,
    opts: &EvalOptions,
    baseline_flops: u64,
) -> Result<RunReport> {
    check_dataset(model, dataset)?;
    Ok(match model.precision() {
        Precision::F32 => {
            let out = run_samples::<f32>(model, dataset, cfg, opts)?;
            assemble(model, dataset, cfg, out, baseline_flops)
        }
        Precision::F64 => {
            let out = run_samples::<f64>(model, dataset, cfg, opts)?;
            assemble(model, dataset, cfg, out, baseline_flops)
        }
    })
}

/// Runs every sample of `dataset` through `model` under `cfg`. FLOPs are
/// normalized by the cost of an unpruned run over the same samples.
pub fn evaluate(model: &Model, dataset: &Dataset, cfg: &PruneConfig) -> Result<RunReport> {
    evaluate_with(model, dataset, cfg, &EvalOptions::default())
}

pub fn evaluate_with(
    model: &Model,
    dataset: &Dataset,
    cfg: &PruneConfig,
    opts: &EvalOptions,
) -> Result<RunReport> {
    let baseline = model_flops(model)? * dataset.len() as u64;
    evaluate_against(model, dataset, cfg, opts, baseline)
}

/// Evaluates many configurations against one cached baseline run.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    model: &'a Model,
    dataset: &'a Dataset,
    baseline: RunReport,
    opts: EvalOptions,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a Model, dataset: &'a Dataset, opts: EvalOptions) -> Result<Self> {
        check_dataset(model, dataset)?;
        let mut baseline = evaluate_against(model, dataset, &PruneConfig::none(), &opts, 1)?;
        baseline.baseline_flops = baseline.total_flops;
        baseline.normalized_flops = 1.0;
        Ok(Self {
            model,
            dataset,
            baseline,
            opts,
        })
    }

    pub fn baseline(&self) -> &RunReport {
        &self.baseline
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn run(&self, cfg: &PruneConfig) -> Result<RunReport> {
        evaluate_against(
            self.model,
            self.dataset,
            cfg,
            &self.opts,
            self.baseline.total_flops,
        )
    }
}
