use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    All,
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split `{other}`"))),
        }
    }
}

/// Labelled samples. Every label is below `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Tensor<f64>>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split: Split::All,
        })
    }

    pub fn inputs(&self) -> &[Tensor<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split_tag(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn subset(&self, range: std::ops::Range<usize>, split: Split) -> Self {
        Self {
            inputs: self.inputs[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
            classes: self.classes,
            split,
        }
    }

    /// Contiguous train/val/test partition; the test part takes the remainder.
    pub fn partition(&self, train_frac: f64, val_frac: f64) -> Result<(Self, Self, Self)> {
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&val_frac)
            || train_frac + val_frac > 1.0
        {
            return Err(Error::Dataset(format!(
                "invalid partition fractions {train_frac}/{val_frac}"
            )));
        }
        let n = self.len();
        let n_train = (n as f64 * train_frac).round() as usize;
        let n_val = ((n as f64 * val_frac).round() as usize).min(n - n_train);
        Ok((
            self.subset(0..n_train, Split::Train),
            self.subset(n_train..n_train + n_val, Split::Val),
            self.subset(n_train + n_val..n, Split::Test),
        ))
    }

    /// Fixed 70/15/15 partition used by the command line `--split` option.
    pub fn select(&self, split: Split) -> Result<Self> {
        let (train, val, test) = self.partition(0.7, 0.15)?;
        Ok(match split {
            Split::All => self.clone(),
            Split::Train => train,
            Split::Val => val,
            Split::Test => test,
        })
    }

    /// Reshapes every input to `shape` (same element count).
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let inputs = self
            .inputs
            .iter()
            .map(|t| t.clone().reshape(shape.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs,
            labels: self.labels.clone(),
            classes: self.classes,
            split: self.split,
        })
    }
}
