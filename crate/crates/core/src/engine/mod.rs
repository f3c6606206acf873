//! Inference with early exit from exchangeable reductions, with FLOP metering.

pub mod config;
mod eval;
pub mod flops;
mod neuron;
mod order;
mod plan;
pub mod reference;

pub use config::{
    prunable_layers, HeadPredictorCfg, HeadPredictorKind, LayerPruneCfg, PruneConfig,
    ReluPredictorCfg, ReluPredictorKind, TermOrder, DEFAULT_HEAD_K, DEFAULT_RELU_K,
};
pub use eval::{evaluate, evaluate_with, EvalOptions, Evaluator, LayerReport, RunReport, SampleRecord};
pub use flops::{
    flops_of, model_flops, model_layer_flops, statstest_check_flops, Counters, FlopsLedger,
    LayerTally, THRESHOLD_CHECK_FLOPS,
};
pub use neuron::{eval_neuron_exprune, NeuronOutcome, NeuronPredicate};
pub use order::{cost_order, input_channel_nonzeros};
pub use plan::{order_tables, Engine, SampleOutcome};
pub use reference::{forward, forward_all, top1};
