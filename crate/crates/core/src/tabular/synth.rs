use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Class-conditional Gaussian image blobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetCfg {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Standard deviation of the per-pixel noise added to the class pattern.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthDatasetCfg {
    fn default() -> Self {
        SynthDatasetCfg {
            num_classes: 4,
            samples_per_class: 256,
            image_size: 16,
            channels: 3,
            noise: 1.0,
            seed: 0,
        }
    }
}

fn class_pattern(cfg: &SynthDatasetCfg, class: usize) -> Vec<f64> {
    let (c, s) = (cfg.channels, cfg.image_size);
    let mut r = rng::rng(rng::hash64(rng::hash_str(cfg.seed, "pattern"), class as u64));
    let raw: Vec<f64> = (0..c * s * s).map(|_| StandardNormal.sample(&mut r)).collect();
    // one 3x3 box blur gives the pattern spatial structure
    let mut out = vec![0.0; raw.len()];
    for ch in 0..c {
        for y in 0..s {
            for x in 0..s {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for yy in y.saturating_sub(1)..=(y + 1).min(s - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(s - 1) {
                        acc += raw[(ch * s + yy) * s + xx];
                        cnt += 1.0;
                    }
                }
                out[(ch * s + y) * s + x] = acc / cnt;
            }
        }
        // zero mean, unit variance per channel: class identity is not
        // recoverable from channel averages alone
        let plane = &mut out[ch * s * s..(ch + 1) * s * s];
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane.len() as f64;
        let sd = var.sqrt().max(1e-12);
        for v in plane.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
    out
}

/// Generate train/val/test splits (60/20/20 per class). Deterministic in
/// `cfg`; the splits never share a sample.
pub fn synth_dataset(cfg: &SynthDatasetCfg) -> Result<Dataset> {
    if cfg.num_classes == 0 || cfg.samples_per_class == 0 || cfg.image_size == 0 || cfg.channels == 0 {
        return Err(Error::Config("dataset needs classes, samples, pixels and channels".into()));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(Error::Config(format!("noise level {} must be finite and non-negative", cfg.noise)));
    }
    if cfg.samples_per_class < 3 {
        return Err(Error::Config("need at least 3 samples per class to split".into()));
    }
    let (c, s) = (cfg.channels, cfg.image_size);
    let len = c * s * s;
    let n_val = (cfg.samples_per_class / 5).max(1);
    let n_test = n_val;
    let n_train = cfg.samples_per_class - n_val - n_test;

    let mut parts: [(Vec<f64>, Vec<usize>); 3] = Default::default();
    for class in 0..cfg.num_classes {
        let pattern = class_pattern(cfg, class);
        let mut r = rng::rng(rng::hash64(rng::hash_str(cfg.seed, "noise"), class as u64));
        for i in 0..cfg.samples_per_class {
            let which = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            let (data, labels) = &mut parts[which];
            data.extend(pattern.iter().map(|p| {
                let z: f64 = StandardNormal.sample(&mut r);
                p + cfg.noise * z
            }));
            labels.push(class);
        }
    }
    let mut splits = parts.into_iter().enumerate().map(|(k, (data, labels))| {
        let n = labels.len();
        let t = Tensor::new(vec![n, c, s, s], data)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng(rng::hash64(rng::hash_str(cfg.seed, "order"), k as u64)));
        let whole = Split::new(t, labels)?;
        Ok::<_, Error>(whole.subset(&order))
    });
    let train = splits.next().expect("three splits")?;
    let val = splits.next().expect("three splits")?;
    let test = splits.next().expect("three splits")?;
    debug_assert_eq!(train.inputs.sample_len(), len);
    Ok(Dataset {
        train,
        val,
        test,
        num_classes: cfg.num_classes,
    })
}
