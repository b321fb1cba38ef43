//! Plain minibatch SGD, used only to fill tabular benchmarks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NormMode};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.05,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Fraction of correctly classified samples, evaluated in chunks of
/// `batch_size` with batch statistics.
pub fn accuracy(graph: &mut Graph, split: &Split, batch_size: usize) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = split.subset(chunk);
        let logits = graph.forward(&b.inputs, NormMode::BatchStats)?;
        for (i, &label) in b.labels.iter().enumerate() {
            let row = logits.sample(i);
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0;
            correct += (pred == label) as usize;
        }
    }
    graph.clear_pass();
    Ok(correct as f64 / split.len() as f64)
}

/// Train `graph` in place with momentum SGD and return the final validation
/// accuracy. Deterministic for a fixed graph initialization and `cfg.seed`.
pub fn sgd_train(graph: &mut Graph, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || !cfg.lr.is_finite() {
        return Err(Error::Config("batch size must be positive and lr finite".into()));
    }
    let mut velocity: Vec<Vec<f64>> = graph.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::rng(rng::hash64(cfg.seed, epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let b = data.train.subset(chunk);
            let loss = graph.forward_loss(&b.inputs, &b.labels, NormMode::BatchStats)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            graph.backward_loss()?;
            for (p, v) in graph.params_mut().iter_mut().zip(velocity.iter_mut()) {
                let grad = p.grad.data().to_vec();
                for ((w, vel), g) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                    *vel = cfg.momentum * *vel + g;
                    *w -= cfg.lr * *vel;
                }
            }
        }
    }
    graph.clear_pass();
    accuracy(graph, &data.val, cfg.batch_size)
}
