//! Seeded Gaussian-blob classification sets.
//!
//! Class `c` has a center drawn coordinate-wise from N(0, 1) on stream
//! [`streams::BLOB_CENTERS`]; sample `i` has label `i mod n_classes` and
//! coordinates `center + spread * N(0, 1)` drawn on [`streams::BLOB_SAMPLES`].

use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::tensor::Tensor;

pub fn gen_blobs(
    seed: u64,
    n_samples: usize,
    dims: usize,
    n_classes: usize,
    spread: f64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::Dataset("blobs need at least two classes".into()));
    }
    if dims == 0 {
        return Err(Error::Dataset("blobs need at least one dimension".into()));
    }
    let mut center_rng = stream_rng(seed, streams::BLOB_CENTERS);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..dims)
                .map(|_| StandardNormal.sample(&mut center_rng))
                .collect()
        })
        .collect();
    let mut rng = stream_rng(seed, streams::BLOB_SAMPLES);
    let mut inputs = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let label = i % n_classes;
        let x = centers[label]
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + spread * z
            })
            .collect();
        inputs.push(Tensor::vector(x)?);
        labels.push(label);
    }
    Dataset::new(inputs, labels, n_classes)
}

/// Blobs whose samples are shaped as `C×H×W` images.
pub fn gen_blob_images(
    seed: u64,
    n_samples: usize,
    image_shape: [usize; 3],
    n_classes: usize,
    spread: f64,
) -> Result<Dataset> {
    let dims = image_shape.iter().product();
    gen_blobs(seed, n_samples, dims, n_classes, spread)?.reshaped(&image_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = gen_blobs(11, 50, 3, 4, 0.5).unwrap();
        let b = gen_blobs(11, 50, 3, 4, 0.5).unwrap();
        assert_eq!(a, b);
        let c = gen_blobs(12, 50, 3, 4, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn two_class_labels_are_balanced() {
        for n in [10, 11, 37] {
            let ds = gen_blobs(5, n, 2, 2, 1.0).unwrap();
            let ones = ds.labels().iter().filter(|&&l| l == 1).count() as i64;
            let zeros = n as i64 - ones;
            assert!((ones - zeros).abs() <= 1);
        }
    }

    #[test]
    fn zero_spread_collapses_onto_centers() {
        let ds = gen_blobs(3, 8, 4, 4, 0.0).unwrap();
        assert_eq!(ds.inputs()[0], ds.inputs()[4]);
        assert_ne!(ds.inputs()[0], ds.inputs()[1]);
    }

    #[test]
    fn rejects_single_class() {
        assert!(gen_blobs(0, 4, 2, 1, 1.0).is_err());
    }
}
