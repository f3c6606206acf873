//! Compiled execution plan: layers fused into stages, with predictors,
//! term orders and per-term costs resolved once per configuration.

use std::collections::BTreeMap;

use super::config::{HeadPredictorCfg, HeadPredictorKind, PruneConfig, TermOrder};
use super::flops::{statstest_check_flops, FlopsLedger, LayerTally};
use super::neuron::{stream_neuron, NeuronOutcome, NeuronPredicate};
use super::order::{cost_order, input_channel_nonzeros};
use super::reference::top1;
use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, Model};
use crate::ops::{avg_pool_global, batchnorm_scalar, channel_tap_sum, relu0, Conv2dGeometry};
use crate::predict::{
    argmax, dominance_statstest, dominance_threshold, Affine, ClassScoreStats, Schedule,
};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
struct Bn<T> {
    gamma: Vec<T>,
    beta: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    eps: T,
}

impl<T: Real> Bn<T> {
    fn from_layer(model: &Model, layer: &LayerSpec, eps: f64) -> Self {
        let v = |i: usize| model.weight(layer, i).cast::<T>().into_data();
        Self {
            gamma: v(0),
            beta: v(1),
            mean: v(2),
            var: v(3),
            eps: T::from_f64_lossy(eps),
        }
    }

    #[inline]
    fn apply(&self, c: usize, x: T) -> T {
        batchnorm_scalar(
            x,
            self.gamma[c],
            self.beta[c],
            self.mean[c],
            self.var[c],
            self.eps,
        )
    }
}

#[derive(Debug, Clone)]
enum LinearOp<T> {
    Dense {
        w: Vec<T>,
        n_in: usize,
        n_out: usize,
    },
    Conv {
        k: Vec<T>,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: Conv2dGeometry,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    },
}

/// A dense or conv layer with its optional bias, batchnorm and ReLU fused in.
#[derive(Debug, Clone)]
struct Linear<T> {
    op: LinearOp<T>,
    bias: Option<Vec<T>>,
    bn: Option<Bn<T>>,
    relu: bool,
    layer: usize,
    bn_layer: Option<usize>,
    relu_layer: Option<usize>,
    /// Input index computed at each position.
    order: Vec<usize>,
    /// `costs[o * n + pos]`: FLOPs of the term at `pos` for output channel `o`.
    costs: Vec<u64>,
    pred: Option<NeuronPredicate>,
    enabled: Vec<bool>,
    affine: Vec<Affine>,
}

#[derive(Debug, Clone)]
enum HeadRule {
    Threshold(Vec<f64>),
    StatsTest { alpha: f64, ranks: Vec<usize> },
}

#[derive(Debug, Clone)]
struct HeadPredicate {
    rule: HeadRule,
    k: usize,
    schedule: Schedule,
}

impl HeadPredicate {
    fn from_cfg(cfg: &HeadPredictorCfg) -> Option<Self> {
        let rule = match &cfg.kind {
            HeadPredictorKind::None => return None,
            HeadPredictorKind::Threshold { thresholds } => HeadRule::Threshold(thresholds.clone()),
            HeadPredictorKind::StatsTest { alpha, ranks } => HeadRule::StatsTest {
                alpha: *alpha,
                ranks: ranks.clone(),
            },
        };
        Some(Self {
            rule,
            k: cfg.k,
            schedule: cfg.schedule,
        })
    }

    fn check_flops(&self, consumed: usize) -> u64 {
        match &self.rule {
            HeadRule::Threshold(t) => t.len() as u64,
            HeadRule::StatsTest { ranks, .. } => statstest_check_flops(consumed) * ranks.len() as u64,
        }
    }

    fn last_check(&self, n: usize) -> usize {
        match self.schedule {
            Schedule::OnceAtK if self.k < n => self.k,
            Schedule::OnceAtK => 0,
            Schedule::EveryK => (n - 1) / self.k * self.k,
        }
    }

    /// Returns the current winner if it is confidently final.
    fn decide(&self, folded: &[f64], classes: usize) -> Result<Option<usize>> {
        match &self.rule {
            HeadRule::Threshold(t) => {
                let mut scores = vec![0.0; classes];
                for term in folded.chunks_exact(classes) {
                    for (s, &x) in scores.iter_mut().zip(term) {
                        *s += x;
                    }
                }
                Ok(dominance_threshold(&scores, t).then(|| argmax(&scores)))
            }
            HeadRule::StatsTest { alpha, ranks } => {
                let stats =
                    ClassScoreStats::from_terms(folded.chunks_exact(classes), classes, ranks)?;
                Ok(dominance_statstest(&stats, *alpha)?.then_some(stats.winner))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Head<T> {
    w: Vec<T>,
    bias: Option<Vec<T>>,
    bias_f64: Vec<f64>,
    n: usize,
    classes: usize,
    layer: usize,
    order: Vec<usize>,
    costs: Vec<u64>,
    pred: Option<HeadPredicate>,
}

#[derive(Debug, Clone)]
enum Stage<T> {
    Linear(Box<Linear<T>>),
    Batchnorm { bn: Bn<T>, layer: usize },
    Relu { layer: usize },
    Pool { layer: usize },
    Head(Box<Head<T>>),
}

/// Result of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome<T> {
    pub class: usize,
    /// Final scores, absent when the head stopped early.
    pub scores: Option<Vec<T>>,
    pub ledger: FlopsLedger,
}

/// A model compiled against one [`PruneConfig`] at precision `T`.
#[derive(Debug, Clone)]
pub struct Engine<T: Real> {
    stages: Vec<Stage<T>>,
    input_shape: Vec<usize>,
    layer_count: usize,
    shadow: bool,
}

impl<T: Real> Engine<T> {
    pub fn compile(model: &Model, cfg: &PruneConfig) -> Result<Self> {
        cfg.validate(model)?;
        let shapes = model.activation_shapes()?;
        let layers = model.layers();
        let mut stages = Vec::new();
        let mut i = 0;
        while i < layers.len() {
            let layer = &layers[i];
            match &layer.kind {
                LayerKind::Dense { .. } | LayerKind::Conv2d { .. } => {
                    let mut next = i + 1;
                    let bn_layer = match layers.get(next).map(|l| &l.kind) {
                        Some(LayerKind::Batchnorm { .. }) => {
                            next += 1;
                            Some(i + 1)
                        }
                        _ => None,
                    };
                    let relu_layer = match layers.get(next).map(|l| &l.kind) {
                        Some(LayerKind::Relu) => {
                            next += 1;
                            Some(next - 1)
                        }
                        _ => None,
                    };
                    let lin = compile_linear(model, cfg, i, bn_layer, relu_layer, &shapes)?;
                    stages.push(Stage::Linear(Box::new(lin)));
                    i = next;
                }
                LayerKind::Batchnorm { eps, .. } => {
                    stages.push(Stage::Batchnorm {
                        bn: Bn::from_layer(model, layer, *eps),
                        layer: i,
                    });
                    i += 1;
                }
                LayerKind::Relu => {
                    stages.push(Stage::Relu { layer: i });
                    i += 1;
                }
                LayerKind::AvgPoolGlobal => {
                    stages.push(Stage::Pool { layer: i });
                    i += 1;
                }
                LayerKind::PredictionHead { .. } => {
                    stages.push(Stage::Head(Box::new(compile_head(model, cfg, i)?)));
                    i += 1;
                }
            }
        }
        Ok(Self {
            stages,
            input_shape: model.input_shape().to_vec(),
            layer_count: layers.len(),
            shadow: false,
        })
    }

    /// In shadow mode pruned reductions are also completed, uncharged, to
    /// count mispredictions.
    pub fn with_shadow(mut self, shadow: bool) -> Self {
        self.shadow = shadow;
        self
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn run(&self, input: &Tensor<T>) -> Result<SampleOutcome<T>> {
        self.run_inner(input, None)
    }

    /// Like [`Engine::run`], also returning the activation after every
    /// stage before the head (fused layers yield one activation).
    pub fn run_traced(&self, input: &Tensor<T>) -> Result<(SampleOutcome<T>, Vec<Tensor<T>>)> {
        let mut trace = Vec::new();
        let out = self.run_inner(input, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn run_inner(
        &self,
        input: &Tensor<T>,
        mut trace: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<SampleOutcome<T>> {
        let want: usize = self.input_shape.iter().product();
        if input.len() != want {
            return Err(Error::Shape(format!(
                "input of shape {:?} does not fit model input {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        let mut ledger = FlopsLedger::new(self.layer_count);
        let mut x = input.clone().reshape(self.input_shape.clone())?;
        for stage in &self.stages {
            match stage {
                Stage::Linear(lin) => x = lin.run(&x, self.shadow, &mut ledger)?,
                Stage::Batchnorm { bn, layer } => {
                    let per = x.len() / x.shape()[0];
                    for (idx, v) in x.data_mut().iter_mut().enumerate() {
                        *v = bn.apply(idx / per, *v);
                    }
                    ledger.layers[*layer].flops.bias += 2 * x.len() as u64;
                }
                Stage::Relu { layer } => {
                    for v in x.data_mut() {
                        *v = relu0(*v);
                    }
                    ledger.layers[*layer].flops.activation += x.len() as u64;
                }
                Stage::Pool { layer } => {
                    ledger.layers[*layer].flops.activation += x.len() as u64;
                    x = avg_pool_global(&x)?;
                }
                Stage::Head(head) => return head.run(&x, self.shadow, ledger),
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(x.clone());
            }
        }
        let scores = x.into_data();
        Ok(SampleOutcome {
            class: top1(&scores),
            scores: Some(scores),
            ledger,
        })
    }
}

fn column_costs(weights: &[f64], rows: usize, cols: usize, per: usize, order: &[usize]) -> Vec<u64> {
    // Cost of term `pos` for row `o`: 2 FLOPs per nonzero weight in the slice
    // of row `o` that multiplies input `order[pos]`.
    let mut costs = Vec::with_capacity(rows * cols);
    for o in 0..rows {
        for &i in order {
            let base = (o * cols + i) * per;
            let nnz = weights[base..base + per].iter().filter(|w| **w != 0.0).count();
            costs.push(2 * nnz as u64);
        }
    }
    costs
}

fn term_order(model: &Model, layer: &LayerSpec, policy: TermOrder, active: bool) -> Vec<usize> {
    let counts = input_channel_nonzeros(&layer.kind, model.weight(layer, 0));
    match policy {
        TermOrder::ByNonzeroCost if active => cost_order(&counts),
        _ => (0..counts.len()).collect(),
    }
}

fn compile_linear<T: Real>(
    model: &Model,
    cfg: &PruneConfig,
    idx: usize,
    bn_layer: Option<usize>,
    relu_layer: Option<usize>,
    shapes: &[Vec<usize>],
) -> Result<Linear<T>> {
    let layer = &model.layers()[idx];
    let w64 = model.weight(layer, 0);
    let bias64 = model.bias(layer).map(|b| b.data().to_vec());
    let bn_spec = bn_layer.map(|b| &model.layers()[b]);
    let bn = bn_spec.map(|l| match l.kind {
        LayerKind::Batchnorm { eps, .. } => (Bn::<T>::from_layer(model, l, eps), l, eps),
        _ => unreachable!("batchnorm index"),
    });
    let layer_cfg = cfg.layers.get(&layer.name);
    let pred = match layer_cfg {
        Some(c) if relu_layer.is_some() => NeuronPredicate::from_cfg(&c.predictor)?,
        _ => None,
    };
    let order = term_order(model, layer, cfg.order, pred.is_some());
    let (op, rows, cols, per) = match layer.kind {
        LayerKind::Dense {
            in_features,
            out_features,
        } => (
            LinearOp::Dense {
                w: w64.cast::<T>().into_data(),
                n_in: in_features,
                n_out: out_features,
            },
            out_features,
            in_features,
            1,
        ),
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let (ins, outs) = (&shapes[idx], &shapes[idx + 1]);
            (
                LinearOp::Conv {
                    k: w64.cast::<T>().into_data(),
                    c_in: in_channels,
                    c_out: out_channels,
                    kernel: (kernel[0], kernel[1]),
                    geom: Conv2dGeometry { stride, padding },
                    in_hw: (ins[1], ins[2]),
                    out_hw: (outs[1], outs[2]),
                },
                out_channels,
                in_channels,
                kernel[0] * kernel[1],
            )
        }
        _ => unreachable!("linear stage on {}", layer.kind.tag()),
    };
    let costs = column_costs(w64.data(), rows, cols, per, &order);
    let affine = (0..rows)
        .map(|o| {
            let b = bias64.as_ref().map_or(0.0, |b| b[o]);
            match &bn {
                None => Affine { w: 1.0, b, n: cols },
                Some((_, l, eps)) => {
                    let p = |i: usize| model.weight(l, i).data()[o];
                    let scale = p(0) / (p(3) + eps).sqrt();
                    Affine {
                        w: scale,
                        b: scale * (b - p(2)) + p(1),
                        n: cols,
                    }
                }
            }
        })
        .collect();
    let ratio = layer_cfg.and_then(|c| c.disable_ratio);
    let enabled = (0..rows)
        .map(|o| match (&pred, ratio) {
            (Some(p), Some(r)) => {
                let overhead = p.overhead(cols);
                let tail: u64 = costs[o * cols..(o + 1) * cols].iter().skip(p.k()).sum();
                overhead == 0 || tail as f64 / overhead as f64 >= r
            }
            _ => true,
        })
        .collect();
    Ok(Linear {
        op,
        bias: bias64.map(|b| b.into_iter().map(T::from_f64_lossy).collect()),
        bn: bn.map(|(b, _, _)| b),
        relu: relu_layer.is_some(),
        layer: idx,
        bn_layer,
        relu_layer,
        order,
        costs,
        pred,
        enabled,
        affine,
    })
}

impl<T: Real> Linear<T> {
    #[inline]
    fn finish(&self, o: usize, outcome: NeuronOutcome<T>, tally: &mut LayerTally) -> T {
        let pre = |s: T| {
            let mut z = s;
            if let Some(b) = &self.bias {
                z += b[o];
            }
            if let Some(bn) = &self.bn {
                z = bn.apply(o, z);
            }
            z
        };
        match outcome {
            NeuronOutcome::Complete { sum } => {
                let z = pre(sum);
                if self.relu {
                    relu0(z)
                } else {
                    z
                }
            }
            NeuronOutcome::Pruned { full, .. } => {
                if full.is_some_and(|f| pre(f) >= T::zero()) {
                    tally.mispredicts += 1;
                }
                T::zero()
            }
        }
    }

    fn run(&self, x: &Tensor<T>, shadow: bool, ledger: &mut FlopsLedger) -> Result<Tensor<T>> {
        let mut tally = LayerTally::default();
        let out = match &self.op {
            LinearOp::Dense { w, n_in, n_out } => {
                let (n_in, n_out) = (*n_in, *n_out);
                let xs = x.data();
                let mut out = Vec::with_capacity(n_out);
                for o in 0..n_out {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let pred = self.pred.as_ref().filter(|_| self.enabled[o]);
                    let outcome = stream_neuron(
                        n_in,
                        |pos| {
                            let i = self.order[pos];
                            row[i] * xs[i]
                        },
                        &self.costs[o * n_in..(o + 1) * n_in],
                        pred,
                        &self.affine[o],
                        shadow,
                        &mut tally,
                    )?;
                    out.push(self.finish(o, outcome, &mut tally));
                }
                Tensor::vector(out)?
            }
            LinearOp::Conv {
                k,
                c_in,
                c_out,
                kernel,
                geom,
                in_hw,
                out_hw,
            } => {
                let (c_in, c_out) = (*c_in, *c_out);
                let (h, w) = *in_hw;
                let (ho, wo) = *out_hw;
                let (kh, kw) = *kernel;
                let xs = x.data();
                let mut out = Vec::with_capacity(c_out * ho * wo);
                for o in 0..c_out {
                    let pred = self.pred.as_ref().filter(|_| self.enabled[o]);
                    let costs = &self.costs[o * c_in..(o + 1) * c_in];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let outcome = stream_neuron(
                                c_in,
                                |pos| {
                                    let ci = self.order[pos];
                                    let plane = &xs[ci * h * w..(ci + 1) * h * w];
                                    let tb = (o * c_in + ci) * kh * kw;
                                    channel_tap_sum(
                                        plane,
                                        (h, w),
                                        &k[tb..tb + kh * kw],
                                        (kh, kw),
                                        (oy, ox),
                                        *geom,
                                    )
                                },
                                costs,
                                pred,
                                &self.affine[o],
                                shadow,
                                &mut tally,
                            )?;
                            out.push(self.finish(o, outcome, &mut tally));
                        }
                    }
                }
                Tensor::new(vec![c_out, ho, wo], out)?
            }
        };
        let elems = out.len() as u64;
        if self.bias.is_some() {
            tally.flops.bias += elems;
        }
        ledger.layers[self.layer] += &tally;
        if let Some(b) = self.bn_layer {
            ledger.layers[b].flops.bias += 2 * elems;
        }
        if let Some(r) = self.relu_layer {
            ledger.layers[r].flops.activation += elems;
        }
        Ok(out)
    }
}

fn compile_head<T: Real>(model: &Model, cfg: &PruneConfig, idx: usize) -> Result<Head<T>> {
    let layer = &model.layers()[idx];
    let LayerKind::PredictionHead {
        in_features,
        classes,
    } = layer.kind
    else {
        unreachable!("head stage");
    };
    let pred = cfg.head.as_ref().and_then(HeadPredicate::from_cfg);
    let w64 = model.weight(layer, 0);
    let order = term_order(model, layer, cfg.order, pred.is_some());
    // One term feeds every class, so its cost is the nonzero count of its column.
    let mut costs = vec![0u64; in_features];
    for (pos, &i) in order.iter().enumerate() {
        costs[pos] = (0..classes)
            .filter(|&c| w64.data()[c * in_features + i] != 0.0)
            .count() as u64
            * 2;
    }
    let bias64 = model.bias(layer).map(|b| b.data().to_vec());
    Ok(Head {
        w: w64.cast::<T>().into_data(),
        bias: bias64
            .as_ref()
            .map(|b| b.iter().map(|&x| T::from_f64_lossy(x)).collect()),
        bias_f64: bias64.unwrap_or_else(|| vec![0.0; classes]),
        n: in_features,
        classes,
        layer: idx,
        order,
        costs,
        pred,
    })
}

impl<T: Real> Head<T> {
    fn complete(&self, acc: &mut [T], xs: &[T], from: usize) {
        for &i in &self.order[from..] {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += self.w[c * self.n + i] * xs[i];
            }
        }
    }

    fn logits(&self, mut acc: Vec<T>) -> Vec<T> {
        if let Some(b) = &self.bias {
            for (a, &bc) in acc.iter_mut().zip(b) {
                *a += bc;
            }
        }
        acc
    }

    fn run(
        &self,
        x: &Tensor<T>,
        shadow: bool,
        mut ledger: FlopsLedger,
    ) -> Result<SampleOutcome<T>> {
        let xs = x.data();
        let (n, classes) = (self.n, self.classes);
        let mut tally = LayerTally {
            outputs: 1,
            ..LayerTally::default()
        };
        let mut acc = vec![T::zero(); classes];
        let last = self.pred.as_ref().map_or(0, |p| p.last_check(n));
        let mut folded: Vec<f64> = Vec::with_capacity(last * classes);
        let mut early = None;
        for pos in 0..n {
            let i = self.order[pos];
            for (c, a) in acc.iter_mut().enumerate() {
                let t = self.w[c * n + i] * xs[i];
                *a += t;
                if pos < last {
                    folded.push(t.as_f64() + self.bias_f64[c] / n as f64);
                }
            }
            tally.flops.head += self.costs[pos];
            let consumed = pos + 1;
            if let Some(p) = self.pred.as_ref().filter(|_| pos < last) {
                if p.schedule.fires(consumed, p.k, n) {
                    tally.checks += 1;
                    tally.flops.predictor += p.check_flops(consumed);
                    if let Some(winner) = p.decide(&folded, classes)? {
                        tally.prunes += 1;
                        tally.terms_computed += consumed as u64;
                        tally.terms_total += n as u64;
                        early = Some((winner, consumed));
                        break;
                    }
                }
            }
        }
        let outcome = match early {
            Some((winner, consumed)) => {
                if shadow {
                    self.complete(&mut acc, xs, consumed);
                    if top1(&self.logits(acc)) != winner {
                        tally.mispredicts += 1;
                    }
                }
                SampleOutcome {
                    class: winner,
                    scores: None,
                    ledger: FlopsLedger::default(),
                }
            }
            None => {
                if self.bias.is_some() {
                    tally.flops.head += classes as u64;
                }
                let scores = self.logits(acc);
                SampleOutcome {
                    class: top1(&scores),
                    scores: Some(scores),
                    ledger: FlopsLedger::default(),
                }
            }
        };
        ledger.layers[self.layer] += &tally;
        Ok(SampleOutcome { ledger, ..outcome })
    }
}

/// Per-layer term orders used by a configuration, keyed by layer name.
pub fn order_tables(model: &Model, cfg: &PruneConfig) -> BTreeMap<String, Vec<usize>> {
    model
        .layers()
        .iter()
        .filter(|l| {
            matches!(
                l.kind,
                LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::PredictionHead { .. }
            )
        })
        .map(|l| {
            let active = match l.kind {
                LayerKind::PredictionHead { .. } => cfg
                    .head
                    .as_ref()
                    .is_some_and(|h| h.kind != HeadPredictorKind::None),
                _ => cfg
                    .layers
                    .get(&l.name)
                    .is_some_and(|c| c.predictor.kind != super::config::ReluPredictorKind::None),
            };
            (l.name.clone(), term_order(model, l, cfg.order, active))
        })
        .collect()
}
