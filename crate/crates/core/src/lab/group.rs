//! Exchangeable parameter groups and their permutation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{LayerKind, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    MlpHidden,
    ConvChannel,
    AttentionHeadDim,
}

/// One tensor axis indexed by the group: slice `i` of the group is index
/// `i` along `axis` of every listed tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceRef {
    pub tensor: String,
    pub axis: usize,
}

/// Disjoint, equal-shaped parameter slices `ζᵢ`, one per group index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub kind: GroupKind,
    /// Layer whose outputs the group indexes.
    pub layer: String,
    pub size: usize,
    pub slices: Vec<SliceRef>,
}

impl GroupSpec {
    /// The group formed by the outputs of dense or conv layer `layer`: its
    /// weight rows and bias, any batchnorm parameters on the same channel,
    /// and the matching input slice of the next dense/conv/head layer.
    pub fn hidden(model: &Model, layer: &str) -> Result<Self> {
        let (idx, spec) = model
            .layer(layer)
            .ok_or_else(|| Error::Config(format!("no layer named `{layer}`")))?;
        let (kind, size) = match spec.kind {
            LayerKind::Dense { out_features, .. } => (GroupKind::MlpHidden, out_features),
            LayerKind::Conv2d { out_channels, .. } => (GroupKind::ConvChannel, out_channels),
            _ => {
                return Err(Error::Config(format!(
                    "`{layer}` is not a dense or conv layer"
                )))
            }
        };
        let mut slices: Vec<SliceRef> = spec
            .tensor_refs()
            .map(|t| SliceRef {
                tensor: t.to_string(),
                axis: 0,
            })
            .collect();
        let mut consumer = None;
        for next in &model.layers()[idx + 1..] {
            match next.kind {
                LayerKind::Batchnorm { .. } => slices.extend(next.weights.iter().map(|t| SliceRef {
                    tensor: t.clone(),
                    axis: 0,
                })),
                LayerKind::Relu | LayerKind::AvgPoolGlobal => {}
                LayerKind::Dense { .. }
                | LayerKind::Conv2d { .. }
                | LayerKind::PredictionHead { .. } => {
                    consumer = Some(next);
                    break;
                }
            }
        }
        let consumer = consumer.ok_or_else(|| {
            Error::Config(format!("`{layer}` has no consuming layer to pair with"))
        })?;
        slices.push(SliceRef {
            tensor: consumer.weights[0].clone(),
            axis: 1,
        });
        Ok(Self {
            kind,
            layer: layer.to_string(),
            size,
            slices,
        })
    }

    /// The same group with the consumer's input slice left out: not a
    /// symmetry of the network, used as a negative control.
    pub fn without_consumer(mut self) -> Self {
        self.slices.retain(|s| s.axis == 0);
        self
    }

    pub fn touches(&self, tensor: &str) -> bool {
        self.slices.iter().any(|s| s.tensor == tensor)
    }

    pub fn check_permutation(&self, perm: &[usize]) -> Result<()> {
        check_permutation(perm, self.size)
    }

    /// `P·ζ`: slot `j` of every group slice takes the old slice `perm[j]`.
    pub fn permute_tensors(
        &self,
        tensors: &BTreeMap<String, Tensor<f64>>,
        perm: &[usize],
    ) -> Result<BTreeMap<String, Tensor<f64>>> {
        self.check_permutation(perm)?;
        let mut out = tensors.clone();
        for s in &self.slices {
            let t = tensors
                .get(&s.tensor)
                .ok_or_else(|| Error::Config(format!("group tensor `{}` missing", s.tensor)))?;
            out.insert(s.tensor.clone(), permute_axis(t, s.axis, perm)?);
        }
        Ok(out)
    }

    pub fn permute_model(&self, model: &Model, perm: &[usize]) -> Result<Model> {
        model.with_tensors(self.permute_tensors(model.tensors(), perm)?)
    }
}

pub fn check_permutation(perm: &[usize], size: usize) -> Result<()> {
    let mut seen = vec![false; size];
    if perm.len() != size {
        return Err(Error::InvalidPermutation(format!(
            "length {} for a group of {size}",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= size || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidPermutation(format!(
                "{perm:?} is not a permutation of 0..{size}"
            )));
        }
    }
    Ok(())
}

/// Reorders `t` along `axis` so that `out[.., j, ..] = t[.., perm[j], ..]`.
pub fn permute_axis(t: &Tensor<f64>, axis: usize, perm: &[usize]) -> Result<Tensor<f64>> {
    let shape = t.shape();
    if axis >= shape.len() || shape[axis] != perm.len() {
        return Err(Error::InvalidPermutation(format!(
            "cannot permute axis {axis} of shape {shape:?} with {} indices",
            perm.len()
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for o in 0..outer {
        for &p in perm {
            let base = (o * n + p) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
    }
    Tensor::new(shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use crate::train::{init_model, Arch};

    #[test]
    fn permutes_along_axis() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let p = permute_axis(&t, 1, &[2, 0, 1]).unwrap();
        assert_eq!(p.data(), &[2.0, 0.0, 1.0, 5.0, 3.0, 4.0]);
        let p = permute_axis(&t, 0, &[1, 0]).unwrap();
        assert_eq!(p.data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
        assert!(permute_axis(&t, 0, &[0, 1, 2]).is_err());
    }

    #[test]
    fn validates_permutations() {
        assert!(check_permutation(&[1, 0, 2], 3).is_ok());
        assert!(check_permutation(&[1, 1, 2], 3).is_err());
        assert!(check_permutation(&[0, 3, 1], 3).is_err());
        assert!(check_permutation(&[0, 1], 3).is_err());
    }

    #[test]
    fn conv_bn_group_collects_all_slices() {
        let m = init_model(&"cnn:2x4x4-c5b-c3-2".parse::<Arch>().unwrap(), 0, Precision::F64).unwrap();
        let g = GroupSpec::hidden(&m, "conv1").unwrap();
        let names: Vec<_> = g.slices.iter().map(|s| (s.tensor.as_str(), s.axis)).collect();
        assert_eq!(
            names,
            vec![
                ("conv1.weight", 0),
                ("bn1.gamma", 0),
                ("bn1.beta", 0),
                ("bn1.mean", 0),
                ("bn1.var", 0),
                ("conv2.weight", 1)
            ]
        );
        assert_eq!(g.size, 5);
        let g2 = GroupSpec::hidden(&m, "conv2").unwrap();
        assert_eq!(g2.slices.last().unwrap().tensor, "head.weight");
        assert!(GroupSpec::hidden(&m, "head").is_err());
    }
}
