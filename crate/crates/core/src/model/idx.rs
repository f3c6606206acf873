//! IDX (MNIST-style) image and label files.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an image file and a label file; pixels are scaled from bytes to `[0, 1]`.
/// Each image becomes a flat tensor of `rows * cols` values.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}

pub(crate) fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let image_header = header(images, IDX_IMAGES_MAGIC, 4)?;
    let (n_images, rows, cols) = (image_header[0], image_header[1], image_header[2]);
    let label_header = header(labels, IDX_LABELS_MAGIC, 2)?;
    let n_labels = label_header[0];
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let pixels = rows * cols;
    let image_bytes = &images[16..];
    if image_bytes.len() < n_images * pixels {
        return Err(Error::Truncated {
            expected: n_images * pixels,
            found: image_bytes.len(),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n_labels {
        return Err(Error::Truncated {
            expected: n_labels,
            found: label_bytes.len(),
        });
    }
    let label_bytes = &label_bytes[..n_labels];
    let classes = label_bytes.iter().copied().max().map_or(2, |m| m as usize + 1).max(2);
    let inputs = image_bytes
        .chunks_exact(pixels.max(1))
        .take(n_images)
        .map(|px| Tensor::vector(px.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        inputs,
        label_bytes.iter().map(|&l| l as usize).collect(),
        classes,
    )
}

/// Validates the magic number and returns the `dims - 1` big-endian extents following it.
fn header(bytes: &[u8], magic: u32, words: usize) -> Result<Vec<usize>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < words * 4 {
        return Err(Error::Truncated {
            expected: words * 4,
            found: bytes.len(),
        });
    }
    Ok(bytes[4..words * 4]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect())
}
