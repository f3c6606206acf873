//! Function-preserving permutations and permutation-equivariant training steps.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::group::{check_permutation, GroupKind, GroupSpec, SliceRef};
use crate::engine::forward;
use crate::error::Result;
use crate::model::{Dataset, Model};
use crate::ops::{self, Conv2dGeometry};
use crate::rng::{stream_rng, streams};
use crate::tensor::Tensor;
use crate::train::sgd_step;

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    a.max_abs_diff(b)
}

/// `max_x ‖f_{P·θ}(x) − f_θ(x)‖∞` over the probes.
pub fn symmetry_check(
    model: &Model,
    group: &GroupSpec,
    perm: &[usize],
    probes: &[Tensor<f64>],
) -> Result<f64> {
    let permuted = group.permute_model(model, perm)?;
    let mut worst: f64 = 0.0;
    for x in probes {
        worst = worst.max(max_abs_diff(&forward(model, x)?, &forward(&permuted, x)?)?);
    }
    Ok(worst)
}

/// Deviations between permuting after and before one gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equivariance {
    /// Over the group's slices: `‖P·G(ζ) − G(P·ζ)‖∞`.
    pub group: f64,
    /// Over every other parameter, which the permutation must not affect.
    pub rest: f64,
}

/// Runs one gradient step on the batch from `model` and from its permuted
/// copy and compares the results.
pub fn equivariance_check(
    model: &Model,
    group: &GroupSpec,
    data: &Dataset,
    batch: &[usize],
    perm: &[usize],
    lr: f64,
) -> Result<Equivariance> {
    check_permutation(perm, group.size)?;
    let after = sgd_step(model, data, batch, lr, 0.0, None)?.model;
    let permuted_after = group.permute_tensors(after.tensors(), perm)?;
    let before = group.permute_model(model, perm)?;
    let stepped = sgd_step(&before, data, batch, lr, 0.0, None)?.model;
    let mut out = Equivariance {
        group: 0.0,
        rest: 0.0,
    };
    for (name, t) in stepped.tensors() {
        if group.touches(name) {
            out.group = out.group.max(t.max_abs_diff(&permuted_after[name])?);
        } else {
            out.rest = out.rest.max(t.max_abs_diff(&after.tensors()[name])?);
        }
    }
    Ok(out)
}

/// A uniformly random permutation of `0..n`.
pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn gaussian(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal)).expect("nonempty shape")
}

/// Single-head attention `W·(V·X)·softmax_cols((Q·X)ᵀ(K·X))`; `X` holds one
/// token per column.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub k: Tensor<f64>,
    pub q: Tensor<f64>,
    pub v: Tensor<f64>,
    pub w: Tensor<f64>,
}

impl AttentionBlock {
    /// `K`, `Q`, `V` are `d_head × d`, `W` is `d_out × d_head`.
    pub fn random(seed: u64, d: usize, d_head: usize, d_out: usize) -> Self {
        let mut rng = stream_rng(seed, streams::LAB);
        let s = 1.0 / (d as f64).sqrt();
        Self {
            k: gaussian(&mut rng, vec![d_head, d], s),
            q: gaussian(&mut rng, vec![d_head, d], s),
            v: gaussian(&mut rng, vec![d_head, d], s),
            w: gaussian(&mut rng, vec![d_out, d_head], 1.0 / (d_head as f64).sqrt()),
        }
    }

    pub fn forward(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        ops::attention_forward(x, &self.k, &self.q, &self.v, &self.w)
    }

    pub fn group_size(&self) -> usize {
        self.v.shape()[0]
    }

    /// Permutes the value dimension: rows of `V` together with columns of `W`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let tensors = self.as_map();
        let p = self.value_group().permute_tensors(&tensors, perm)?;
        Ok(Self {
            v: p["v"].clone(),
            w: p["w"].clone(),
            ..self.clone()
        })
    }

    fn as_map(&self) -> BTreeMap<String, Tensor<f64>> {
        [("k", &self.k), ("q", &self.q), ("v", &self.v), ("w", &self.w)]
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// `ζᵢ = V[i, :] ⊕ W[:, i]`.
    pub fn value_group(&self) -> GroupSpec {
        GroupSpec {
            kind: GroupKind::AttentionHeadDim,
            layer: "attention".into(),
            size: self.group_size(),
            slices: vec![
                SliceRef {
                    tensor: "v".into(),
                    axis: 0,
                },
                SliceRef {
                    tensor: "w".into(),
                    axis: 1,
                },
            ],
        }
    }

    pub fn symmetry_check(&self, perm: &[usize], probes: &[Tensor<f64>]) -> Result<f64> {
        let p = self.permuted(perm)?;
        let mut worst: f64 = 0.0;
        for x in probes {
            worst = worst.max(self.forward(x)?.max_abs_diff(&p.forward(x)?)?);
        }
        Ok(worst)
    }
}

/// A conv net with one residual block:
/// `h = ReLU(stem(x))`, `z = ReLU(h + res_b(ReLU(res_a(h))))`, `head(pool(z))`.
/// The skip connection ties the stem's output channels to the residual
/// branch's output channels and the head's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub tensors: BTreeMap<String, Tensor<f64>>,
    pub channels: usize,
    pub inner: usize,
}

impl ResidualNet {
    pub fn random(seed: u64, c_in: usize, channels: usize, inner: usize, classes: usize) -> Self {
        let mut rng = stream_rng(seed, streams::LAB);
        let mut tensors = BTreeMap::new();
        let mut put = |name: &str, shape: Vec<usize>, fan_in: usize| {
            let t = gaussian(&mut rng, shape, (2.0 / fan_in as f64).sqrt());
            tensors.insert(name.to_string(), t);
        };
        put("stem.weight", vec![channels, c_in, 3, 3], c_in * 9);
        put("stem.bias", vec![channels], 8);
        put("res_a.weight", vec![inner, channels, 3, 3], channels * 9);
        put("res_a.bias", vec![inner], 8);
        put("res_b.weight", vec![channels, inner, 3, 3], inner * 9);
        put("res_b.bias", vec![channels], 8);
        put("head.weight", vec![classes, channels], channels);
        put("head.bias", vec![classes], 8);
        Self {
            tensors,
            channels,
            inner,
        }
    }

    fn conv(&self, tensors: &BTreeMap<String, Tensor<f64>>, name: &str, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let geom = Conv2dGeometry {
            stride: 1,
            padding: 1,
        };
        let mut y = ops::conv2d(x, &tensors[&format!("{name}.weight")], geom)?;
        let b = tensors[&format!("{name}.bias")].data();
        let per = y.len() / b.len();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += b[i / per];
        }
        Ok(y)
    }

    pub fn forward_with(
        &self,
        tensors: &BTreeMap<String, Tensor<f64>>,
        x: &Tensor<f64>,
    ) -> Result<Tensor<f64>> {
        let h = ops::relu_tensor(&self.conv(tensors, "stem", x)?);
        let a = ops::relu_tensor(&self.conv(tensors, "res_a", &h)?);
        let mut z = self.conv(tensors, "res_b", &a)?;
        for (zi, hi) in z.data_mut().iter_mut().zip(h.data()) {
            *zi += hi;
        }
        let pooled = ops::avg_pool_global(&ops::relu_tensor(&z))?;
        let mut out = ops::matmul(&tensors["head.weight"], &pooled)?;
        for (o, b) in out.data_mut().iter_mut().zip(tensors["head.bias"].data()) {
            *o += b;
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.forward_with(&self.tensors, x)
    }

    fn slices(items: &[(&str, usize)]) -> Vec<SliceRef> {
        items
            .iter()
            .map(|(t, a)| SliceRef {
                tensor: t.to_string(),
                axis: *a,
            })
            .collect()
    }

    /// Channels of the residual stream, shared across the skip connection.
    pub fn stream_group(&self) -> GroupSpec {
        GroupSpec {
            kind: GroupKind::ConvChannel,
            layer: "stream".into(),
            size: self.channels,
            slices: Self::slices(&[
                ("stem.weight", 0),
                ("stem.bias", 0),
                ("res_a.weight", 1),
                ("res_b.weight", 0),
                ("res_b.bias", 0),
                ("head.weight", 1),
            ]),
        }
    }

    /// Channels inside the residual branch.
    pub fn branch_group(&self) -> GroupSpec {
        GroupSpec {
            kind: GroupKind::ConvChannel,
            layer: "res_a".into(),
            size: self.inner,
            slices: Self::slices(&[("res_a.weight", 0), ("res_a.bias", 0), ("res_b.weight", 1)]),
        }
    }

    pub fn symmetry_check(
        &self,
        group: &GroupSpec,
        perm: &[usize],
        probes: &[Tensor<f64>],
    ) -> Result<f64> {
        let permuted = group.permute_tensors(&self.tensors, perm)?;
        let mut worst: f64 = 0.0;
        for x in probes {
            worst = worst.max(self.forward(x)?.max_abs_diff(&self.forward_with(&permuted, x)?)?);
        }
        Ok(worst)
    }
}

/// Standard-normal probe tensors of the given shape.
pub fn gaussian_probes(seed: u64, shape: &[usize], count: usize) -> Vec<Tensor<f64>> {
    let mut rng = stream_rng(seed, streams::LAB + 1);
    (0..count).map(|_| gaussian(&mut rng, shape.to_vec(), 1.0)).collect()
}
