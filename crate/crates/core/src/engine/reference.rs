//! Unpruned forward pass composed from the tensor operations.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{LayerKind, Model};
use crate::ops;
use crate::predict::argmax;
use crate::tensor::{Real, Tensor};

/// Brings `input` to the model's input shape when only the layout differs.
pub(crate) fn conform_input<T: Real>(model: &Model, input: &Tensor<T>) -> Result<Tensor<T>> {
    let want = model.input_shape();
    if input.shape() == want {
        return Ok(input.clone());
    }
    if input.len() != want.iter().product::<usize>() {
        return Err(Error::Shape(format!(
            "input of shape {:?} does not fit model input {want:?}",
            input.shape()
        )));
    }
    input.clone().reshape(want.to_vec())
}

fn add_channel_bias<T: Real>(x: &mut Tensor<T>, bias: &Tensor<T>) {
    let per = x.len() / bias.len();
    let b = bias.data();
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += b[i / per];
    }
}

/// Every activation of the plain forward pass: entry 0 is the input and
/// entry `i + 1` the output of layer `i`.
pub fn forward_all<T: Real>(
    model: &Model,
    tensors: &BTreeMap<String, Tensor<T>>,
    input: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let mut acts = vec![conform_input(model, input)?];
    for layer in model.layers() {
        let x = acts.last().expect("non-empty");
        let weight = |i: usize| &tensors[&layer.weights[i]];
        let bias = layer.bias.as_ref().map(|b| &tensors[b]);
        let mut y = match &layer.kind {
            LayerKind::Dense { .. } | LayerKind::PredictionHead { .. } => {
                ops::matmul(weight(0), x)?
            }
            LayerKind::Conv2d { .. } => {
                let geom = layer.kind.conv_geometry().expect("conv layer");
                ops::conv2d(x, weight(0), geom)?
            }
            LayerKind::Batchnorm { eps, .. } => ops::batchnorm(
                x,
                weight(0).data(),
                weight(1).data(),
                weight(2).data(),
                weight(3).data(),
                T::from_f64_lossy(*eps),
            )?,
            LayerKind::Relu => ops::relu_tensor(x),
            LayerKind::AvgPoolGlobal => ops::avg_pool_global(x)?,
        };
        if let Some(b) = bias {
            add_channel_bias(&mut y, b);
        }
        acts.push(y);
    }
    Ok(acts)
}

/// Output scores of the plain forward pass.
pub fn forward<T: Real>(model: &Model, input: &Tensor<T>) -> Result<Tensor<T>> {
    let tensors = model.cast_tensors::<T>();
    Ok(forward_all(model, &tensors, input)?
        .pop()
        .expect("at least the input"))
}

/// Top-1 class of a score vector, ties towards the lower index.
pub fn top1<T: Real>(scores: &[T]) -> usize {
    let s: Vec<f64> = scores.iter().map(|x| x.as_f64()).collect();
    argmax(&s)
}
