//! Cross-entropy loss and its gradient by backpropagation, in `f64`.

use std::collections::BTreeMap;

use crate::engine::reference::forward_all;
use crate::error::{Error, Result};
use crate::model::{Dataset, LayerKind, Model};
use crate::tensor::Tensor;

/// Names of the tensors gradient descent updates. Batchnorm running
/// statistics are fixed; only its scale and shift are trained.
pub fn trainable_tensors(model: &Model) -> Vec<String> {
    let mut out = Vec::new();
    for layer in model.layers() {
        match layer.kind {
            LayerKind::Batchnorm { .. } => out.extend(layer.weights[..2].iter().cloned()),
            _ => out.extend(layer.tensor_refs().map(str::to_string)),
        }
    }
    out
}

/// `−log softmax(z)[label]`, computed stably, and its gradient `softmax(z) − e_label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / total - f64::from(u8::from(i == label)))
        .collect();
    (loss, grad)
}

/// Summed loss and summed gradients over the samples `indices` of `data`.
/// Gradients are keyed like [`trainable_tensors`].
pub fn loss_and_gradients(
    model: &Model,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut grads: BTreeMap<String, Vec<f64>> = trainable_tensors(model)
        .into_iter()
        .map(|n| {
            let len = model.tensor(&n).expect("validated").len();
            (n, vec![0.0; len])
        })
        .collect();
    let mut loss = 0.0;
    for &i in indices {
        let input = data
            .inputs()
            .get(i)
            .ok_or_else(|| Error::Dataset(format!("sample index {i} out of range")))?;
        loss += accumulate_sample(model, input, data.labels()[i], &mut grads)?;
    }
    Ok((loss, grads))
}

fn accumulate_sample(
    model: &Model,
    input: &Tensor<f64>,
    label: usize,
    grads: &mut BTreeMap<String, Vec<f64>>,
) -> Result<f64> {
    let acts = forward_all(model, model.tensors(), input)?;
    let logits = acts.last().expect("output");
    if label >= logits.len() {
        return Err(Error::Dataset(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    let (loss, mut dy) = cross_entropy(logits.data(), label);
    for (idx, layer) in model.layers().iter().enumerate().rev() {
        let x = &acts[idx];
        let xs = x.data();
        let need_dx = idx > 0;
        let mut dx = vec![0.0; xs.len()];
        match layer.kind {
            LayerKind::Dense {
                in_features: n,
                out_features: m,
            }
            | LayerKind::PredictionHead {
                in_features: n,
                classes: m,
            } => {
                let w = model.weight(layer, 0).data();
                let gw = grads.get_mut(&layer.weights[0]).expect("trainable");
                for o in 0..m {
                    let g = dy[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * n..(o + 1) * n];
                    for (gj, &xj) in row.iter_mut().zip(xs) {
                        *gj += g * xj;
                    }
                    if need_dx {
                        for (d, &wj) in dx.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                            *d += g * wj;
                        }
                    }
                }
                if let Some(b) = &layer.bias {
                    for (gb, &g) in grads.get_mut(b).expect("trainable").iter_mut().zip(&dy) {
                        *gb += g;
                    }
                }
            }
            LayerKind::Conv2d {
                in_channels: ci_n,
                out_channels: co_n,
                kernel: [kh, kw],
                stride,
                padding,
            } => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                let out_shape = acts[idx + 1].shape();
                let (ho, wo) = (out_shape[1], out_shape[2]);
                let k = model.weight(layer, 0).data();
                let gk = grads.get_mut(&layer.weights[0]).expect("trainable");
                for co in 0..co_n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = dy[(co * ho + oy) * wo + ox];
                            if g == 0.0 {
                                continue;
                            }
                            for ci in 0..ci_n {
                                let tb = (co * ci_n + ci) * kh * kw;
                                for r in 0..kh {
                                    let iy = oy * stride + r;
                                    if iy < padding || iy - padding >= h {
                                        continue;
                                    }
                                    let iy = iy - padding;
                                    for c in 0..kw {
                                        let ix = ox * stride + c;
                                        if ix < padding || ix - padding >= w {
                                            continue;
                                        }
                                        let xi = (ci * h + iy) * w + ix - padding;
                                        gk[tb + r * kw + c] += g * xs[xi];
                                        if need_dx {
                                            dx[xi] += g * k[tb + r * kw + c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(b) = &layer.bias {
                    let gb = grads.get_mut(b).expect("trainable");
                    for (co, chunk) in dy.chunks_exact(ho * wo).enumerate() {
                        gb[co] += chunk.iter().sum::<f64>();
                    }
                }
            }
            LayerKind::Batchnorm { channels, eps } => {
                let p = |i: usize| model.weight(layer, i).data();
                let (gamma, mean, var) = (p(0), p(2), p(3));
                let per = xs.len() / channels;
                let mut g_gamma = vec![0.0; channels];
                let mut g_beta = vec![0.0; channels];
                for (j, (&xj, &g)) in xs.iter().zip(&dy).enumerate() {
                    let c = j / per;
                    let s = (var[c] + eps).sqrt();
                    g_gamma[c] += g * (xj - mean[c]) / s;
                    g_beta[c] += g;
                    dx[j] = g * gamma[c] / s;
                }
                for (name, upd) in layer.weights[..2].iter().zip([g_gamma, g_beta]) {
                    for (a, b) in grads.get_mut(name).expect("trainable").iter_mut().zip(upd) {
                        *a += b;
                    }
                }
            }
            LayerKind::Relu => {
                for ((d, &xj), &g) in dx.iter_mut().zip(xs).zip(&dy) {
                    if xj > 0.0 {
                        *d = g;
                    }
                }
            }
            LayerKind::AvgPoolGlobal => {
                let per = xs.len() / dy.len();
                for (j, d) in dx.iter_mut().enumerate() {
                    *d = dy[j / per] / per as f64;
                }
            }
        }
        dy = dx;
    }
    Ok(loss)
}
