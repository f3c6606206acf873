//! Shared fixtures for the benchmarks.

use exprune_core::engine::{HeadPredictorCfg, LayerPruneCfg, ReluPredictorCfg};
use exprune_core::model::gen_blob_images;
use exprune_core::train::{init_model, Arch};
use exprune_core::{Dataset, Model, Precision, PruneConfig};

pub const CNN: &str = "cnn:3x8x8-c32-c64b-c32-10";

/// An untrained CNN with one conv stage of 64 channels.
pub fn cnn() -> Model {
    init_model(&CNN.parse::<Arch>().expect("valid arch"), 7, Precision::F64).expect("init")
}

pub fn images(n: usize) -> Dataset {
    gen_blob_images(7, n, [3, 8, 8], 10, 1.0).expect("blobs")
}

/// Threshold predictors on every conv stage and a head test.
pub fn threshold_config(t: f64) -> PruneConfig {
    ["conv1", "conv2", "conv3"]
        .into_iter()
        .fold(PruneConfig::none(), |cfg, l| {
            cfg.with_layer(l, LayerPruneCfg::new(ReluPredictorCfg::threshold(t, 8)))
        })
        .with_head(HeadPredictorCfg::statstest(0.05, vec![2], 16))
}
