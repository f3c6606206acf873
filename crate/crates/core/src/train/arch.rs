//! Architecture strings and seeded initialization.
//!
//! * `mlp:IN-H1-...-CLASSES`: dense+ReLU hidden layers and a prediction head.
//! * `cnn:CxHxW-c16-c32b-c64s2-...-CLASSES`: 3×3 convolutions with padding 1
//!   (`b`: batchnorm after the conv, `s2`: stride 2), each followed by a ReLU,
//!   then global average pooling and a prediction head.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, Model, ModelMeta};
use crate::rng::{stream_rng, streams};
use crate::tensor::{Precision, Tensor};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub channels: usize,
    pub batchnorm: bool,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arch {
    Mlp {
        input: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    Cnn {
        input: [usize; 3],
        blocks: Vec<ConvBlock>,
        classes: usize,
    },
}

fn parse_count(s: &str, what: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Config(format!("bad {what} `{s}` in architecture"))),
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, body) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("architecture `{s}` lacks a family prefix")))?;
        let parts: Vec<&str> = body.split('-').collect();
        if parts.len() < 2 {
            return Err(Error::Config(format!("architecture `{s}` is too short")));
        }
        let classes = parse_count(parts[parts.len() - 1], "class count")?;
        if classes < 2 {
            return Err(Error::Config("at least 2 classes are required".into()));
        }
        let middle = &parts[1..parts.len() - 1];
        match family {
            "mlp" => Ok(Arch::Mlp {
                input: parse_count(parts[0], "input width")?,
                hidden: middle
                    .iter()
                    .map(|p| parse_count(p, "hidden width"))
                    .collect::<Result<_>>()?,
                classes,
            }),
            "cnn" => {
                let dims: Vec<usize> = parts[0]
                    .split('x')
                    .map(|d| parse_count(d, "input extent"))
                    .collect::<Result<_>>()?;
                let &[c, h, w] = dims.as_slice() else {
                    return Err(Error::Config(format!(
                        "cnn input `{}` must be CxHxW",
                        parts[0]
                    )));
                };
                if middle.is_empty() {
                    return Err(Error::Config("a cnn needs at least one conv block".into()));
                }
                let blocks = middle
                    .iter()
                    .map(|p| parse_block(p))
                    .collect::<Result<_>>()?;
                Ok(Arch::Cnn {
                    input: [c, h, w],
                    blocks,
                    classes,
                })
            }
            other => Err(Error::Config(format!("unknown architecture family `{other}`"))),
        }
    }
}

fn parse_block(p: &str) -> Result<ConvBlock> {
    let bad = || Error::Config(format!("bad conv block `{p}` (expected e.g. c32, c64b, c64bs2)"));
    let rest = p.strip_prefix('c').ok_or_else(bad)?;
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    let channels = parse_count(&rest[..digits], "channel count")?;
    let mut tail = &rest[digits..];
    let batchnorm = tail.starts_with('b');
    if batchnorm {
        tail = &tail[1..];
    }
    let stride = match tail {
        "" => 1,
        t => parse_count(t.strip_prefix('s').ok_or_else(bad)?, "stride")?,
    };
    Ok(ConvBlock {
        channels,
        batchnorm,
        stride,
    })
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Mlp {
                input,
                hidden,
                classes,
            } => {
                write!(f, "mlp:{input}")?;
                for h in hidden {
                    write!(f, "-{h}")?;
                }
                write!(f, "-{classes}")
            }
            Arch::Cnn {
                input,
                blocks,
                classes,
            } => {
                write!(f, "cnn:{}x{}x{}", input[0], input[1], input[2])?;
                for b in blocks {
                    write!(f, "-c{}", b.channels)?;
                    if b.batchnorm {
                        write!(f, "b")?;
                    }
                    if b.stride != 1 {
                        write!(f, "s{}", b.stride)?;
                    }
                }
                write!(f, "-{classes}")
            }
        }
    }
}

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Zero-mean Gaussian with variance `2 / fan_in`.
    He { fan_in: usize },
    Constant(f64),
}

impl Arch {
    pub fn classes(&self) -> usize {
        match self {
            Arch::Mlp { classes, .. } | Arch::Cnn { classes, .. } => *classes,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            Arch::Mlp { input, .. } => vec![*input],
            Arch::Cnn { input, .. } => input.to_vec(),
        }
    }

    /// Layer list plus the shape and initializer of every tensor, in draw order.
    #[allow(clippy::type_complexity)]
    fn plan(&self) -> (Vec<LayerSpec>, Vec<(String, Vec<usize>, Init)>) {
        let mut layers = Vec::new();
        let mut tensors = Vec::new();
        let mut linear = |layers: &mut Vec<LayerSpec>,
                          name: String,
                          kind: LayerKind,
                          wshape: Vec<usize>,
                          fan_in: usize,
                          bias: Option<usize>| {
            let wname = format!("{name}.weight");
            let mut spec = LayerSpec::new(name.clone(), kind).with_weights(&[&wname]);
            tensors.push((wname, wshape, Init::He { fan_in }));
            if let Some(n) = bias {
                let bname = format!("{name}.bias");
                spec = spec.with_bias(&bname);
                tensors.push((bname, vec![n], Init::Constant(0.0)));
            }
            layers.push(spec);
        };
        let mut bn_tensors = Vec::new();
        match self {
            Arch::Mlp {
                input,
                hidden,
                classes,
            } => {
                let mut width = *input;
                for (i, &h) in hidden.iter().enumerate() {
                    let name = format!("fc{}", i + 1);
                    linear(
                        &mut layers,
                        name,
                        LayerKind::Dense {
                            in_features: width,
                            out_features: h,
                        },
                        vec![h, width],
                        width,
                        Some(h),
                    );
                    layers.push(LayerSpec::new(format!("relu{}", i + 1), LayerKind::Relu));
                    width = h;
                }
                linear(
                    &mut layers,
                    "head".into(),
                    LayerKind::PredictionHead {
                        in_features: width,
                        classes: *classes,
                    },
                    vec![*classes, width],
                    width,
                    Some(*classes),
                );
            }
            Arch::Cnn {
                input,
                blocks,
                classes,
            } => {
                let mut ch = input[0];
                for (i, b) in blocks.iter().enumerate() {
                    let name = format!("conv{}", i + 1);
                    linear(
                        &mut layers,
                        name,
                        LayerKind::Conv2d {
                            in_channels: ch,
                            out_channels: b.channels,
                            kernel: [3, 3],
                            stride: b.stride,
                            padding: 1,
                        },
                        vec![b.channels, ch, 3, 3],
                        ch * 9,
                        (!b.batchnorm).then_some(b.channels),
                    );
                    if b.batchnorm {
                        let bn = format!("bn{}", i + 1);
                        let names: Vec<String> = ["gamma", "beta", "mean", "var"]
                            .iter()
                            .map(|p| format!("{bn}.{p}"))
                            .collect();
                        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                        layers.push(
                            LayerSpec::new(
                                bn,
                                LayerKind::Batchnorm {
                                    channels: b.channels,
                                    eps: BN_EPS,
                                },
                            )
                            .with_weights(&refs),
                        );
                        for (n, v) in names.into_iter().zip([1.0, 0.0, 0.0, 1.0]) {
                            bn_tensors.push((n, vec![b.channels], Init::Constant(v)));
                        }
                    }
                    layers.push(LayerSpec::new(format!("relu{}", i + 1), LayerKind::Relu));
                    ch = b.channels;
                }
                layers.push(LayerSpec::new("pool", LayerKind::AvgPoolGlobal));
                linear(
                    &mut layers,
                    "head".into(),
                    LayerKind::PredictionHead {
                        in_features: ch,
                        classes: *classes,
                    },
                    vec![*classes, ch],
                    ch,
                    Some(*classes),
                );
            }
        }
        tensors.extend(bn_tensors);
        (layers, tensors)
    }
}

/// Draws a fresh model: He-scaled Gaussian weights from the seeded stream,
/// zero biases, identity batchnorm.
pub fn init_model(arch: &Arch, seed: u64, precision: Precision) -> Result<Model> {
    let (layers, plan) = arch.plan();
    let mut rng = stream_rng(seed, streams::INIT);
    let mut tensors = BTreeMap::new();
    for (name, shape, init) in plan {
        let t = match init {
            Init::He { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| Error::Config(e.to_string()))?;
                Tensor::from_fn(shape, |_| normal.sample(&mut rng))?
            }
            Init::Constant(v) => Tensor::from_fn(shape, |_| v)?,
        };
        tensors.insert(name, t);
    }
    let meta = ModelMeta {
        precision,
        classes: arch.classes(),
        input_shape: arch.input_shape(),
    };
    Model::new(meta, layers, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        for s in ["mlp:2-3-2", "mlp:16-64-32-4", "cnn:3x8x8-c16-c64b-c32s2-10"] {
            let a: Arch = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        for bad in ["mlp", "mlp:2", "mlp:2-0-2", "cnn:3x8-c4-2", "cnn:3x8x8-2", "rnn:2-2", "cnn:3x8x8-q4-2", "mlp:4-1"] {
            assert!(bad.parse::<Arch>().is_err(), "{bad}");
        }
    }

    #[test]
    fn init_is_seeded() {
        let a: Arch = "cnn:2x5x5-c4b-c6-3".parse().unwrap();
        let m1 = init_model(&a, 7, Precision::F64).unwrap();
        let m2 = init_model(&a, 7, Precision::F64).unwrap();
        let m3 = init_model(&a, 8, Precision::F64).unwrap();
        assert_eq!(m1, m2);
        assert_ne!(m1, m3);
        assert!(m1.tensor("conv1.bias").is_none());
        assert_eq!(m1.tensor("conv2.bias").unwrap().count_nonzero(), 0);
        assert_eq!(m1.tensor("bn1.var").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn he_variance() {
        let a: Arch = "mlp:100-200-2".parse().unwrap();
        let m = init_model(&a, 1, Precision::F64).unwrap();
        let w = m.tensor("fc1.weight").unwrap().data();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 100.0;
        assert!((var / target - 1.0).abs() < 0.1, "{var} vs {target}");
    }
}
