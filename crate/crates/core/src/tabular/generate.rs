use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::benchmark::{BenchRow, SeedResult, TabularBenchmark};
use super::synth::{synth_dataset, SynthDatasetCfg};
use crate::autodiff::{accuracy, sgd_train, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::proxies::{compute_proxy, ProxyId, DEFAULT_BATCH_SIZE};
use crate::rng;
use crate::space::{ArchState, Genotype, NetConfig, Space};

/// Training budget of the mini benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTrainCfg {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// One training run per seed; the seed drives both init and shuffling.
    pub seeds: Vec<u64>,
}

impl Default for BenchTrainCfg {
    fn default() -> Self {
        let t = TrainConfig::default();
        BenchTrainCfg {
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            momentum: t.momentum,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything that determines a mini benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniBenchCfg {
    pub data: SynthDatasetCfg,
    /// Width and depth of the macro skeleton; input shape and class count
    /// are taken from `data`.
    pub width: usize,
    pub cells_per_stage: usize,
    pub train: BenchTrainCfg,
    /// End-to-end proxy scores stored per genotype.
    pub proxies: Vec<ProxyId>,
    /// Init and batch seed of the stored proxy scores.
    pub proxy_seed: u64,
}

impl MiniBenchCfg {
    /// The configuration of the bundled toy benchmark.
    pub fn toy() -> Self {
        MiniBenchCfg {
            data: SynthDatasetCfg {
                num_classes: 4,
                samples_per_class: 64,
                image_size: 8,
                channels: 3,
                noise: 2.5,
                seed: 0,
            },
            width: 8,
            cells_per_stage: 1,
            train: BenchTrainCfg::default(),
            proxies: vec![ProxyId::Nwot, ProxyId::Synflow],
            proxy_seed: 0,
        }
    }

    pub fn net(&self, init_seed: u64) -> NetConfig {
        NetConfig {
            width: self.width,
            cells_per_stage: self.cells_per_stage,
            input_shape: vec![self.data.channels, self.data.image_size, self.data.image_size],
            num_classes: self.data.num_classes,
            init_seed,
        }
    }
}

/// A training run that did not produce an accuracy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunFailure {
    pub genotype: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct GeneratedBenchmark {
    pub bench: TabularBenchmark,
    pub failures: Vec<RunFailure>,
}

fn build_row(g: &Genotype, space: &Space, data: &Dataset, cfg: &MiniBenchCfg) -> Result<(BenchRow, Vec<RunFailure>)> {
    let arch = ArchState::from_genotype(space, g.as_str())?;
    let mut results = vec![];
    let mut failures = vec![];
    for &seed in &cfg.train.seeds {
        let run = || -> Result<SeedResult> {
            let mut net = arch.instantiate(&cfg.net(seed))?;
            let tc = TrainConfig {
                epochs: cfg.train.epochs,
                lr: cfg.train.lr,
                batch_size: cfg.train.batch_size,
                momentum: cfg.train.momentum,
                seed,
            };
            let val_acc = sgd_train(&mut net, data, &tc)?;
            let test_acc = accuracy(&mut net, &data.test, tc.batch_size)?;
            Ok(SeedResult { seed, val_acc, test_acc })
        };
        match run() {
            Ok(r) => results.push(r),
            Err(e) => failures.push(RunFailure {
                genotype: g.to_string(),
                seed,
                error: e.to_string(),
            }),
        }
    }
    let mut net = arch.instantiate(&cfg.net(cfg.proxy_seed))?;
    let (params, flops) = (net.num_params() as f64, net.flops() as f64);
    let mut proxy = BTreeMap::new();
    if !cfg.proxies.is_empty() {
        let seed = rng::hash_str(cfg.proxy_seed, "bench-proxy");
        let batch = data.train.sample_batch(DEFAULT_BATCH_SIZE, seed)?;
        for &p in &cfg.proxies {
            let s = compute_proxy(&mut net, p, Some(&batch), seed)?;
            if !s.degenerate {
                proxy.insert(p.name().to_string(), s.value);
            }
        }
    }
    Ok((
        BenchRow {
            genotype: g.to_string(),
            results,
            params: Some(params),
            flops: Some(flops),
            proxy: (!proxy.is_empty()).then_some(proxy),
        },
        failures,
    ))
}

/// Train every genotype of `space` once per seed and record accuracies,
/// size and the requested proxy scores. Rows follow enumeration order; the
/// result is a pure function of the inputs.
pub fn generate_mini_benchmark(space: &Space, cfg: &MiniBenchCfg) -> Result<GeneratedBenchmark> {
    let genotypes: Vec<Genotype> = space.enumerate().collect();
    generate_rows(space, cfg, &genotypes)
}

/// [`generate_mini_benchmark`] restricted to `genotypes`. Each row depends
/// only on its genotype and `cfg`.
pub fn generate_rows(space: &Space, cfg: &MiniBenchCfg, genotypes: &[Genotype]) -> Result<GeneratedBenchmark> {
    if cfg.train.seeds.is_empty() {
        return Err(Error::Config("at least one training seed is required".into()));
    }
    let data = synth_dataset(&cfg.data)?;
    let built: Vec<(BenchRow, Vec<RunFailure>)> = genotypes
        .par_iter()
        .map(|g| build_row(g, space, &data, cfg))
        .collect::<Result<_>>()?;
    let mut bench = TabularBenchmark::new();
    let mut failures = vec![];
    for (row, f) in built {
        failures.extend(f);
        if !row.results.is_empty() {
            bench.insert(row)?;
        }
    }
    Ok(GeneratedBenchmark { bench, failures })
}
