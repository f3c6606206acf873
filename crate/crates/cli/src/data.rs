//! `--data` specifications.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use exprune_core::model::{gen_blob_images, gen_blobs, load_idx};
use exprune_core::{Dataset, Split};

const DEFAULT_SPREAD: f64 = 1.0;

/// Where samples come from.
///
/// * `blobs:SEED,N,DIMS,CLASSES[,SPREAD]`
/// * `blob-images:SEED,N,CxHxW,CLASSES[,SPREAD]`
/// * `idx:IMAGES,LABELS`
/// * a directory holding `images.idx` and `labels.idx`
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Blobs {
        seed: u64,
        n: usize,
        dims: usize,
        classes: usize,
        spread: f64,
    },
    BlobImages {
        seed: u64,
        n: usize,
        shape: [usize; 3],
        classes: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

fn num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().ok().with_context(|| format!("bad {what} `{s}` in data spec"))
}

fn spread(fields: &[&str]) -> Result<f64> {
    match fields.get(4) {
        Some(s) => num(s, "spread"),
        None => Ok(DEFAULT_SPREAD),
    }
}

impl FromStr for DataSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(body) = s.strip_prefix("blobs:") {
            let f: Vec<&str> = body.split(',').collect();
            if !(4..=5).contains(&f.len()) {
                bail!("expected blobs:SEED,N,DIMS,CLASSES[,SPREAD], got `{s}`");
            }
            return Ok(DataSpec::Blobs {
                seed: num(f[0], "seed")?,
                n: num(f[1], "sample count")?,
                dims: num(f[2], "dimension")?,
                classes: num(f[3], "class count")?,
                spread: spread(&f)?,
            });
        }
        if let Some(body) = s.strip_prefix("blob-images:") {
            let f: Vec<&str> = body.split(',').collect();
            if !(4..=5).contains(&f.len()) {
                bail!("expected blob-images:SEED,N,CxHxW,CLASSES[,SPREAD], got `{s}`");
            }
            let dims: Vec<usize> = f[2]
                .split('x')
                .map(|d| num(d, "image extent"))
                .collect::<Result<_>>()?;
            let shape: [usize; 3] = dims
                .try_into()
                .ok()
                .with_context(|| format!("image shape `{}` must be CxHxW", f[2]))?;
            return Ok(DataSpec::BlobImages {
                seed: num(f[0], "seed")?,
                n: num(f[1], "sample count")?,
                shape,
                classes: num(f[3], "class count")?,
                spread: spread(&f)?,
            });
        }
        if let Some(body) = s.strip_prefix("idx:") {
            let (images, labels) = body
                .split_once(',')
                .with_context(|| format!("expected idx:IMAGES,LABELS, got `{s}`"))?;
            return Ok(DataSpec::Idx {
                images: images.into(),
                labels: labels.into(),
            });
        }
        let dir = Path::new(s);
        Ok(DataSpec::Idx {
            images: dir.join("images.idx"),
            labels: dir.join("labels.idx"),
        })
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DataSpec::Blobs { seed, n, dims, classes, spread } => {
                gen_blobs(*seed, *n, *dims, *classes, *spread)?
            }
            DataSpec::BlobImages { seed, n, shape, classes, spread } => {
                gen_blob_images(*seed, *n, *shape, *classes, *spread)?
            }
            DataSpec::Idx { images, labels } => load_idx(images, labels)?,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Dataset> {
        let data = self.load()?.select(split)?;
        if data.is_empty() {
            bail!("the {split:?} split of the data is empty");
        }
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        assert_eq!(
            "blobs:3,100,4,2".parse::<DataSpec>().unwrap(),
            DataSpec::Blobs { seed: 3, n: 100, dims: 4, classes: 2, spread: 1.0 }
        );
        assert_eq!(
            "blob-images:1,10,3x6x6,4,0.5".parse::<DataSpec>().unwrap(),
            DataSpec::BlobImages { seed: 1, n: 10, shape: [3, 6, 6], classes: 4, spread: 0.5 }
        );
        assert!("blobs:1,2".parse::<DataSpec>().is_err());
        assert!("blob-images:1,10,3x6,4".parse::<DataSpec>().is_err());
        assert_eq!(
            "data/mnist".parse::<DataSpec>().unwrap(),
            DataSpec::Idx {
                images: "data/mnist/images.idx".into(),
                labels: "data/mnist/labels.idx".into()
            }
        );
    }
}
