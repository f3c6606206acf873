//! Manifest + weight-blob persistence.
//!
//! The manifest is a TOML document:
//!
//! ```toml
//! schema_version = 1
//! precision = "f64"
//! classes = 10
//! input_shape = [1, 28, 28]
//!
//! [[layers]]
//! name = "conv1"
//! kind = "conv2d"
//! in_channels = 1
//! ...
//!
//! [[tensors]]
//! name = "conv1.weight"
//! shape = [16, 1, 3, 3]
//! offset = 0
//! ```
//!
//! The blob is the concatenation of all tensors as little-endian IEEE-754
//! values of the declared precision, row-major, each at its byte `offset`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Model, ModelMeta};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    precision: Precision,
    classes: usize,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn load_model(manifest_path: impl AsRef<Path>, blob_path: impl AsRef<Path>) -> Result<Model> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let blob_path = blob_path.as_ref();
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    parse_model(&text, &blob)
}

pub(crate) fn parse_model(manifest: &str, blob: &[u8]) -> Result<Model> {
    let manifest: Manifest =
        toml::from_str(manifest).map_err(|e| Error::Manifest(e.message().to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let width = manifest.precision.byte_width();
    let mut expected = 0usize;
    for entry in &manifest.tensors {
        if entry.shape.is_empty() || entry.shape.contains(&0) {
            return Err(Error::Manifest(format!(
                "tensor `{}` has invalid shape {:?}",
                entry.name, entry.shape
            )));
        }
        expected += entry.shape.iter().product::<usize>() * width;
    }
    if blob.len() != expected {
        return Err(Error::BlobLength {
            expected,
            found: blob.len(),
        });
    }

    let mut spans: Vec<(usize, usize, &str)> = Vec::with_capacity(manifest.tensors.len());
    let mut tensors = BTreeMap::new();
    for entry in &manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        let end = entry.offset + numel * width;
        if end > blob.len() {
            return Err(Error::Manifest(format!(
                "tensor `{}` spans bytes {}..{} beyond the {}-byte blob",
                entry.name,
                entry.offset,
                end,
                blob.len()
            )));
        }
        spans.push((entry.offset, end, &entry.name));
        let bytes = &blob[entry.offset..end];
        let data: Vec<f64> = match manifest.precision {
            Precision::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Precision::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                tensor: entry.name.clone(),
                index,
            });
        }
        let t = Tensor::new(entry.shape.clone(), data)?;
        if tensors.insert(entry.name.clone(), t).is_some() {
            return Err(Error::Manifest(format!(
                "tensor `{}` declared twice",
                entry.name
            )));
        }
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::Manifest(format!(
                "tensors `{}` and `{}` overlap in the blob",
                pair[0].2, pair[1].2
            )));
        }
    }

    let meta = ModelMeta {
        precision: manifest.precision,
        classes: manifest.classes,
        input_shape: manifest.input_shape,
    };
    Model::new(meta, manifest.layers, tensors)
}

pub fn save_model(
    model: &Model,
    manifest_path: impl AsRef<Path>,
    blob_path: impl AsRef<Path>,
) -> Result<()> {
    let (text, blob) = render_model(model)?;
    let manifest_path = manifest_path.as_ref();
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    let blob_path = blob_path.as_ref();
    fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))
}

pub(crate) fn render_model(model: &Model) -> Result<(String, Vec<u8>)> {
    let precision = model.precision();
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(model.tensors().len());
    for (name, t) in model.tensors() {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        match precision {
            Precision::F32 => {
                for &x in t.data() {
                    blob.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            Precision::F64 => {
                for &x in t.data() {
                    blob.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        precision,
        classes: model.classes(),
        input_shape: model.input_shape().to_vec(),
        layers: model.layers().to_vec(),
        tensors: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    Ok((text, blob))
}

impl Model {
    /// Loads `manifest.toml` + `weights.bin` from a model directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Model> {
        let dir = dir.as_ref();
        load_model(dir.join(MANIFEST_FILE), dir.join(WEIGHTS_FILE))
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_model(self, dir.join(MANIFEST_FILE), dir.join(WEIGHTS_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::tiny_dense;

    const MINIMAL: &str = r#"
schema_version = 1
precision = "f32"
classes = 2
input_shape = [2]

[[layers]]
name = "fc"
kind = "prediction_head"
in_features = 2
classes = 2
weights = ["w"]

[[tensors]]
name = "w"
shape = [2, 2]
offset = 0
"#;

    fn blob(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn loads_minimal_manifest() {
        let m = parse_model(MINIMAL, &blob(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(m.layers().len(), 1);
        assert_eq!(m.tensor("w").unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn short_blob_is_a_length_error() {
        let mut b = blob(&[1.0, 2.0, 3.0, 4.0]);
        b.pop();
        let err = parse_model(MINIMAL, &b).unwrap_err();
        assert!(matches!(err, Error::BlobLength { expected: 16, found: 15 }));
    }

    #[test]
    fn undeclared_tensor_is_a_missing_ref() {
        let text = MINIMAL.replace(r#"weights = ["w"]"#, r#"weights = ["w9"]"#);
        let err = parse_model(&text, &blob(&[1.0; 4])).unwrap_err();
        assert!(matches!(err, Error::MissingTensor { ref tensor, .. } if tensor == "w9"));
    }

    #[test]
    fn non_finite_blob_value_is_rejected() {
        let err = parse_model(MINIMAL, &blob(&[1.0, f32::INFINITY, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 7");
        let err = parse_model(&text, &blob(&[1.0; 4])).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { found: 7, .. }));
    }

    #[test]
    fn round_trip_keeps_f64_precision_tag() {
        let m = tiny_dense();
        let (text, bytes) = render_model(&m).unwrap();
        let back = parse_model(&text, &bytes).unwrap();
        assert_eq!(back.precision(), Precision::F64);
        assert_eq!(back, m);
    }
}
