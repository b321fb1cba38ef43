//! Labelled sample collections shared by training and scoring.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// A labelled set of samples: `inputs` is `[N, ...]`, one label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::LengthMismatch(inputs.batch(), labels.len()));
        }
        Ok(Split { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `size` distinct samples drawn by a seeded shuffle (with wrap-around
    /// when `size` exceeds the split).
    pub fn sample_batch(&self, size: usize, seed: u64) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::rng(seed));
        let idx: Vec<usize> = order.iter().cycle().take(size).copied().collect();
        Ok(self.subset(&idx))
    }
}

/// One minibatch.
pub type Batch = Split;

/// Disjoint train / validation / test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub num_classes: usize,
}

impl Dataset {
    /// Shape of one sample (no batch dimension).
    pub fn sample_shape(&self) -> &[usize] {
        self.train.inputs.sample_shape()
    }
}
