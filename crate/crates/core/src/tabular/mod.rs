//! Tabular benchmarks: the synthetic dataset, JSONL benchmark tables and the
//! mini-benchmark generator.

mod benchmark;
mod generate;
mod synth;

pub use benchmark::{BenchRow, QueryStats, SeedResult, TabularBenchmark};
pub use generate::{generate_mini_benchmark, generate_rows, BenchTrainCfg, GeneratedBenchmark, MiniBenchCfg, RunFailure};
pub use synth::{synth_dataset, SynthDatasetCfg};

use crate::space::{OpId, Space};

const TOY_BENCHMARK: &str = include_str!("../../data/toy_chain_l4k3.jsonl");

/// Operations of the toy benchmark space.
pub const TOY_OPS: [OpId; 3] = [OpId::Skip, OpId::Conv1x1, OpId::Conv3x3];

/// The 81-genotype space of the bundled benchmark: a 4-layer chain over
/// skip, conv 1x1 and conv 3x3.
pub fn toy_space() -> Space {
    Space::chain(4, &TOY_OPS).expect("valid toy space")
}

/// The bundled benchmark over [`toy_space`], generated with
/// [`MiniBenchCfg::toy`].
pub fn toy_benchmark() -> TabularBenchmark {
    let b = TabularBenchmark::from_reader(TOY_BENCHMARK.as_bytes()).expect("bundled benchmark parses");
    b.check_complete(&toy_space()).expect("bundled benchmark is complete");
    b
}
