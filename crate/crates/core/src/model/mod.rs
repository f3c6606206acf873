//! Model and dataset types plus their on-disk formats.

mod dataset;
mod idx;
mod manifest;
mod synth;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, Split};
pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use manifest::{load_model, save_model, MANIFEST_FILE, SCHEMA_VERSION, WEIGHTS_FILE};
pub use synth::{gen_blob_images, gen_blobs};

use crate::error::{Error, Result};
use crate::ops::Conv2dGeometry;
use crate::tensor::{Precision, Real, Tensor};

/// Layer type together with its geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    /// Inference-form channel normalization: `(x - mean) / sqrt(var + eps) * gamma + beta`.
    /// `weights` holds `[gamma, beta, mean, var]`.
    Batchnorm { channels: usize, eps: f64 },
    Relu,
    AvgPoolGlobal,
    /// Final linear layer whose argmax is the predicted class.
    PredictionHead { in_features: usize, classes: usize },
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Batchnorm { .. } => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::AvgPoolGlobal => "avg_pool_global",
            LayerKind::PredictionHead { .. } => "prediction_head",
        }
    }

    pub fn conv_geometry(&self) -> Option<Conv2dGeometry> {
        match *self {
            LayerKind::Conv2d {
                stride, padding, ..
            } => Some(Conv2dGeometry { stride, padding }),
            _ => None,
        }
    }

    /// Expected shapes of the weight tensors, in `weights` order, and of the bias.
    fn param_shapes(&self) -> (Vec<Vec<usize>>, Option<Vec<usize>>) {
        match *self {
            LayerKind::Dense {
                in_features,
                out_features,
            } => (vec![vec![out_features, in_features]], Some(vec![out_features])),
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                vec![vec![out_channels, in_channels, kernel[0], kernel[1]]],
                Some(vec![out_channels]),
            ),
            LayerKind::Batchnorm { channels, .. } => (vec![vec![channels]; 4], None),
            LayerKind::Relu | LayerKind::AvgPoolGlobal => (vec![], None),
            LayerKind::PredictionHead {
                in_features,
                classes,
            } => (vec![vec![classes, in_features]], Some(vec![classes])),
        }
    }

    /// Output activation shape for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |want: String| {
            Err(Error::InvalidModel(format!(
                "{} layer expects input {want}, got {input:?}",
                self.tag()
            )))
        };
        match *self {
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return mismatch(format!("[{in_features}]"));
                }
                Ok(vec![out_features])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else {
                    return mismatch(format!("[{in_channels}, H, W]"));
                };
                if c != in_channels {
                    return mismatch(format!("[{in_channels}, H, W]"));
                }
                let geom = Conv2dGeometry { stride, padding };
                let ho = geom
                    .output_extent(h, kernel[0])
                    .map_err(|e| Error::InvalidModel(e.to_string()))?;
                let wo = geom
                    .output_extent(w, kernel[1])
                    .map_err(|e| Error::InvalidModel(e.to_string()))?;
                Ok(vec![out_channels, ho, wo])
            }
            LayerKind::Batchnorm { channels, eps } => {
                if !(eps.is_finite() && eps >= 0.0) {
                    return Err(Error::InvalidModel(format!("batchnorm eps {eps} is invalid")));
                }
                if input.first() != Some(&channels) {
                    return mismatch(format!("[{channels}, ...]"));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::AvgPoolGlobal => {
                let &[c, _, _] = input else {
                    return mismatch("[C, H, W]".into());
                };
                Ok(vec![c])
            }
            LayerKind::PredictionHead {
                in_features,
                classes,
            } => {
                if input != [in_features] {
                    return mismatch(format!("[{in_features}]"));
                }
                Ok(vec![classes])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
            weights: Vec::new(),
            bias: None,
        }
    }

    pub fn with_weights(mut self, names: &[&str]) -> Self {
        self.weights = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_bias(mut self, name: &str) -> Self {
        self.bias = Some(name.to_string());
        self
    }

    /// Every tensor name this layer references, weights first.
    pub fn tensor_refs(&self) -> impl Iterator<Item = &str> {
        self.weights
            .iter()
            .map(String::as_str)
            .chain(self.bias.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub precision: Precision,
    pub classes: usize,
    pub input_shape: Vec<usize>,
}

/// Validated network: ordered layers, named parameter tensors, metadata.
///
/// Tensors are held in `f64`; under [`Precision::F32`] every value is rounded
/// to the nearest `f32` on construction so that what is stored equals what runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    meta: ModelMeta,
    layers: Vec<LayerSpec>,
    tensors: BTreeMap<String, Tensor<f64>>,
}

impl Model {
    pub fn new(
        meta: ModelMeta,
        layers: Vec<LayerSpec>,
        mut tensors: BTreeMap<String, Tensor<f64>>,
    ) -> Result<Self> {
        if meta.precision == Precision::F32 {
            for t in tensors.values_mut() {
                for x in t.data_mut() {
                    *x = *x as f32 as f64;
                }
            }
        }
        let model = Self {
            meta,
            layers,
            tensors,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("a model needs at least one layer".into()));
        }
        if self.meta.classes < 2 {
            return Err(Error::InvalidModel("class count must be at least 2".into()));
        }
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::InvalidModel(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
            let (weight_shapes, bias_shape) = layer.kind.param_shapes();
            if layer.weights.len() != weight_shapes.len() {
                return Err(Error::InvalidModel(format!(
                    "layer `{}` ({}) needs {} weight tensors, lists {}",
                    layer.name,
                    layer.kind.tag(),
                    weight_shapes.len(),
                    layer.weights.len()
                )));
            }
            let expected = layer.weights.iter().zip(weight_shapes);
            let bias = match (&layer.bias, bias_shape) {
                (Some(b), Some(shape)) => Some((b, shape)),
                (Some(_), None) => {
                    return Err(Error::InvalidModel(format!(
                        "layer `{}` ({}) cannot carry a bias",
                        layer.name,
                        layer.kind.tag()
                    )))
                }
                (None, _) => None,
            };
            for (name, shape) in expected.chain(bias) {
                let t = self.tensors.get(name).ok_or_else(|| Error::MissingTensor {
                    layer: layer.name.clone(),
                    tensor: name.clone(),
                })?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::TensorShape {
                        layer: layer.name.clone(),
                        tensor: name.clone(),
                        expected: shape,
                        found: t.shape().to_vec(),
                    });
                }
            }
        }
        for (pos, layer) in self.layers.iter().enumerate() {
            if let LayerKind::PredictionHead { classes, .. } = layer.kind {
                if pos + 1 != self.layers.len() {
                    return Err(Error::InvalidModel(
                        "a prediction head may only be the final layer".into(),
                    ));
                }
                if classes != self.meta.classes {
                    return Err(Error::InvalidModel(format!(
                        "head has {classes} classes, metadata declares {}",
                        self.meta.classes
                    )));
                }
            }
        }
        let out = self.activation_shapes()?;
        let last = out.last().expect("non-empty");
        if last != &[self.meta.classes] {
            return Err(Error::InvalidModel(format!(
                "network output shape {last:?} does not match {} classes",
                self.meta.classes
            )));
        }
        for (name, t) in &self.tensors {
            if let Some(index) = t.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    tensor: name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    /// Activation shapes: entry `i` is the input to layer `i`; the last entry is the output.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.meta.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.kind.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn precision(&self) -> Precision {
        self.meta.precision
    }

    pub fn classes(&self) -> usize {
        self.meta.classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.meta.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<(usize, &LayerSpec)> {
        self.layers.iter().enumerate().find(|(_, l)| l.name == name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<f64>> {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.get(name)
    }

    /// Weight tensor `idx` of a layer; validated to exist at construction.
    pub fn weight(&self, layer: &LayerSpec, idx: usize) -> &Tensor<f64> {
        &self.tensors[&layer.weights[idx]]
    }

    pub fn bias(&self, layer: &LayerSpec) -> Option<&Tensor<f64>> {
        layer.bias.as_ref().map(|b| &self.tensors[b])
    }

    /// Same architecture with replacement tensors, re-validated.
    pub fn with_tensors(&self, tensors: BTreeMap<String, Tensor<f64>>) -> Result<Self> {
        Self::new(self.meta.clone(), self.layers.clone(), tensors)
    }

    pub fn with_precision(&self, precision: Precision) -> Result<Self> {
        let mut meta = self.meta.clone();
        meta.precision = precision;
        Self::new(meta, self.layers.clone(), self.tensors.clone())
    }

    /// Names of the convolution kernels, in layer order.
    pub fn conv_kernels(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv2d { .. }))
            .map(|l| l.weights[0].as_str())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Tensors cast to the run precision.
    pub fn cast_tensors<T: Real>(&self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), v.cast()))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// One dense 2→2 layer feeding a 2-class head.
    pub fn tiny_dense() -> Model {
        let meta = ModelMeta {
            precision: Precision::F64,
            classes: 2,
            input_shape: vec![2],
        };
        let layers = vec![
            LayerSpec::new("fc", LayerKind::PredictionHead {
                in_features: 2,
                classes: 2,
            })
            .with_weights(&["fc.weight"]),
        ];
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "fc.weight".to_string(),
            Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap(),
        );
        Model::new(meta, layers, tensors).unwrap()
    }
}
