//! FLOP accounting.
//!
//! One multiply-accumulate is 2 FLOPs and is charged only for nonzero
//! weights. A bias add costs 1 per element, a batchnorm 2 per element
//! (scale and shift), a ReLU 1 per element and global pooling 1 per input
//! element. Padding taps of a convolution are charged like any other tap.
//! A threshold check costs 1 FLOP, a statistical check `2k + 6`.

use std::ops::AddAssign;

use crate::error::Result;
use crate::model::{LayerKind, Model};
use crate::tensor::Tensor;

pub const THRESHOLD_CHECK_FLOPS: u64 = 1;

/// Cost of one statistical check over `k` consumed terms.
pub fn statstest_check_flops(k: usize) -> u64 {
    2 * k as u64 + 6
}

/// FLOP counters by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub mac: u64,
    pub bias: u64,
    pub activation: u64,
    pub predictor: u64,
    pub head: u64,
}

impl Counters {
    pub fn total(&self) -> u64 {
        self.mac + self.bias + self.activation + self.predictor + self.head
    }
}

impl AddAssign<&Counters> for Counters {
    fn add_assign(&mut self, o: &Counters) {
        self.mac += o.mac;
        self.bias += o.bias;
        self.activation += o.activation;
        self.predictor += o.predictor;
        self.head += o.head;
    }
}

/// Counters and prune events attributed to one model layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerTally {
    pub flops: Counters,
    /// Reductions evaluated (neurons, output pixels or head decisions).
    pub outputs: u64,
    pub checks: u64,
    pub prunes: u64,
    /// Terms computed and available, summed over pruned reductions only.
    pub terms_computed: u64,
    pub terms_total: u64,
    pub mispredicts: u64,
}

impl AddAssign<&LayerTally> for LayerTally {
    fn add_assign(&mut self, o: &LayerTally) {
        self.flops += &o.flops;
        self.outputs += o.outputs;
        self.checks += o.checks;
        self.prunes += o.prunes;
        self.terms_computed += o.terms_computed;
        self.terms_total += o.terms_total;
        self.mispredicts += o.mispredicts;
    }
}

impl LayerTally {
    pub fn prune_rate(&self) -> f64 {
        if self.outputs == 0 {
            0.0
        } else {
            self.prunes as f64 / self.outputs as f64
        }
    }
}

/// Per-layer tallies for one or more samples, indexed like the model's layers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopsLedger {
    pub layers: Vec<LayerTally>,
}

impl FlopsLedger {
    pub fn new(layers: usize) -> Self {
        Self {
            layers: vec![LayerTally::default(); layers],
        }
    }

    pub fn merge(&mut self, other: &FlopsLedger) {
        if self.layers.len() < other.layers.len() {
            self.layers.resize(other.layers.len(), LayerTally::default());
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b;
        }
    }

    pub fn counters(&self) -> Counters {
        let mut c = Counters::default();
        for l in &self.layers {
            c += &l.flops;
        }
        c
    }

    pub fn mac_flops(&self) -> u64 {
        self.counters().mac
    }

    pub fn bias_flops(&self) -> u64 {
        self.counters().bias
    }

    pub fn activation_flops(&self) -> u64 {
        self.counters().activation
    }

    pub fn predictor_flops(&self) -> u64 {
        self.counters().predictor
    }

    pub fn head_flops(&self) -> u64 {
        self.counters().head
    }

    pub fn total(&self) -> u64 {
        self.counters().total()
    }

    pub fn prunes(&self) -> u64 {
        self.layers.iter().map(|l| l.prunes).sum()
    }

    pub fn mispredicts(&self) -> u64 {
        self.layers.iter().map(|l| l.mispredicts).sum()
    }
}

/// Cost of one layer with dense weights and, where the kind allows one, a bias.
/// `fused_relu` adds the cost of a ReLU applied to the output.
pub fn flops_of(kind: &LayerKind, input_shape: &[usize], fused_relu: bool) -> Result<u64> {
    let out_shape = kind.output_shape(input_shape)?;
    let out: u64 = out_shape.iter().product::<usize>() as u64;
    let inp: u64 = input_shape.iter().product::<usize>() as u64;
    let relu = if fused_relu { out } else { 0 };
    Ok(match *kind {
        LayerKind::Dense {
            in_features,
            out_features,
        } => 2 * (in_features * out_features) as u64 + out + relu,
        LayerKind::Conv2d {
            in_channels,
            kernel,
            ..
        } => 2 * out * (in_channels * kernel[0] * kernel[1]) as u64 + out + relu,
        LayerKind::Batchnorm { .. } => 2 * out + relu,
        LayerKind::Relu => out,
        LayerKind::AvgPoolGlobal => inp + relu,
        LayerKind::PredictionHead {
            in_features,
            classes,
        } => 2 * (in_features * classes) as u64 + classes as u64,
    })
}

/// Analytic per-layer cost of an unpruned forward pass, counting MACs only
/// for nonzero weights and bias adds only where a bias is present.
pub fn model_layer_flops(model: &Model) -> Result<Vec<u64>> {
    let shapes = model.activation_shapes()?;
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let out: u64 = shapes[i + 1].iter().product::<usize>() as u64;
            let inp: u64 = shapes[i].iter().product::<usize>() as u64;
            let nnz = |t: &Tensor<f64>| t.count_nonzero() as u64;
            let bias = if layer.bias.is_some() { out } else { 0 };
            Ok(match layer.kind {
                LayerKind::Dense { .. } => 2 * nnz(model.weight(layer, 0)) + bias,
                LayerKind::Conv2d { .. } => {
                    let pixels = (shapes[i + 1][1] * shapes[i + 1][2]) as u64;
                    2 * pixels * nnz(model.weight(layer, 0)) + bias
                }
                LayerKind::Batchnorm { .. } => 2 * out,
                LayerKind::Relu => out,
                LayerKind::AvgPoolGlobal => inp,
                LayerKind::PredictionHead { .. } => 2 * nnz(model.weight(layer, 0)) + bias,
            })
        })
        .collect()
}

/// Sum of [`model_layer_flops`]: the cost of one unpruned sample.
pub fn model_flops(model: &Model) -> Result<u64> {
    Ok(model_layer_flops(model)?.iter().sum())
}
