//! Term orders for reductions over input channels.

use crate::model::LayerKind;
use crate::tensor::Tensor;

/// Nonzero weights fed by each input channel (dense/head: column `i`;
/// conv: the `[:, i, :, :]` slab). Other layer kinds have no channels.
pub fn input_channel_nonzeros(kind: &LayerKind, weight: &Tensor<f64>) -> Vec<usize> {
    let (rows, cols, per) = match *kind {
        LayerKind::Dense {
            in_features,
            out_features,
        } => (out_features, in_features, 1),
        LayerKind::PredictionHead {
            in_features,
            classes,
        } => (classes, in_features, 1),
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => (out_channels, in_channels, kernel[0] * kernel[1]),
        _ => return Vec::new(),
    };
    let w = weight.data();
    let mut counts = vec![0; cols];
    for o in 0..rows {
        for (i, count) in counts.iter_mut().enumerate() {
            let base = (o * cols + i) * per;
            *count += w[base..base + per].iter().filter(|x| **x != 0.0).count();
        }
    }
    counts
}

/// Indices sorted by ascending count; equal counts keep index order.
pub fn cost_order(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| counts[i]);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_ascending_and_stably() {
        assert_eq!(cost_order(&[5, 0, 3]), vec![1, 2, 0]);
        assert_eq!(cost_order(&[2, 2, 1, 2]), vec![2, 0, 1, 3]);
    }

    #[test]
    fn counts_conv_slabs() {
        let kind = LayerKind::Conv2d {
            in_channels: 2,
            out_channels: 2,
            kernel: [1, 2],
            stride: 1,
            padding: 0,
        };
        // [co][ci][kw]: channel 0 has 1 + 2 nonzeros, channel 1 has 0 + 1.
        let k = Tensor::new(vec![2, 2, 1, 2], vec![1.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 5.0]).unwrap();
        assert_eq!(input_channel_nonzeros(&kind, &k), vec![3, 1]);
    }
}
