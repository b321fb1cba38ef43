use proptest::prelude::*;
use zcpt_core::space::Space;
use zcpt_core::tabular::{
    generate_mini_benchmark, generate_rows, synth_dataset, toy_benchmark, toy_space, BenchRow, BenchTrainCfg,
    MiniBenchCfg, SeedResult, SynthDatasetCfg, TabularBenchmark,
};
use zcpt_core::{Error, Genotype, OpId};

#[test]
fn bundled_benchmark_is_complete_and_spread() {
    let b = toy_benchmark();
    assert_eq!(b.len(), 81);
    assert_eq!(b.num_records(), 243);
    let means: Vec<f64> = b.rows().iter().map(|r| r.mean_val_acc()).collect();
    let spread = means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 0.02, "{spread}");
    assert!(b.rows().iter().all(|r| r.proxy.as_ref().is_some_and(|p| p.contains_key("nwot"))));
}

#[test]
fn bundled_rows_regenerate_exactly() {
    let bundled = toy_benchmark();
    let space = toy_space();
    let picks: Vec<Genotype> = space.enumerate().step_by(40).collect();
    let out = generate_rows(&space, &MiniBenchCfg::toy(), &picks).unwrap();
    assert!(out.failures.is_empty());
    for row in out.bench.rows() {
        assert_eq!(Some(row), bundled.get(&row.genotype));
    }
}

#[test]
fn tiny_benchmark_generation_is_deterministic() {
    let space = Space::chain(1, &[OpId::Skip, OpId::Conv1x1]).unwrap();
    let cfg = MiniBenchCfg {
        data: SynthDatasetCfg {
            samples_per_class: 8,
            image_size: 4,
            ..Default::default()
        },
        width: 2,
        cells_per_stage: 1,
        train: BenchTrainCfg {
            epochs: 2,
            seeds: vec![0, 1],
            ..Default::default()
        },
        proxies: vec![],
        proxy_seed: 0,
    };
    let a = generate_mini_benchmark(&space, &cfg).unwrap();
    let b = generate_mini_benchmark(&space, &cfg).unwrap();
    assert_eq!(a.bench, b.bench);
    assert_eq!(a.bench.len(), 2);
    a.bench.check_complete(&space).unwrap();
    let no_seeds = MiniBenchCfg {
        train: BenchTrainCfg {
            seeds: vec![],
            ..cfg.train.clone()
        },
        ..cfg
    };
    assert!(generate_mini_benchmark(&space, &no_seeds).is_err());
}

#[test]
fn dataset_splits_are_disjoint_and_deterministic() {
    let cfg = SynthDatasetCfg {
        samples_per_class: 10,
        image_size: 4,
        ..Default::default()
    };
    let d = synth_dataset(&cfg).unwrap();
    assert_eq!(d.train.len() + d.val.len() + d.test.len(), 40);
    let again = synth_dataset(&cfg).unwrap();
    assert_eq!(d.train.inputs, again.train.inputs);
    let n = d.train.inputs.sample_len();
    for (i, a) in [&d.train, &d.val, &d.test].iter().enumerate() {
        for b in [&d.train, &d.val, &d.test].iter().skip(i + 1) {
            for x in 0..a.len() {
                for y in 0..b.len() {
                    assert_ne!(&a.inputs.data()[x * n..(x + 1) * n], &b.inputs.data()[y * n..(y + 1) * n]);
                }
            }
        }
    }
    assert!(synth_dataset(&SynthDatasetCfg { noise: -1.0, ..cfg }).is_err());
}

#[test]
fn incomplete_and_malformed_files_are_rejected() {
    let space = toy_space();
    let mut b = TabularBenchmark::new();
    for row in toy_benchmark().rows().iter().take(80) {
        b.insert(row.clone()).unwrap();
    }
    assert!(matches!(b.check_complete(&space), Err(Error::Incomplete(_))));
    let bad = "{\"genotype\":\"|skip~0|\",\"results\":[]}\n";
    assert!(TabularBenchmark::from_reader(bad.as_bytes()).is_err());
    let garbage = "not json\n";
    assert!(matches!(TabularBenchmark::from_reader(garbage.as_bytes()), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(toy_benchmark().query("|skip~0|"), Err(Error::UnknownGenotype(_))));
}

fn rows_strategy() -> impl Strategy<Value = Vec<(u8, Vec<f64>)>> {
    prop::collection::vec((0u8..40, prop::collection::vec(0.0f64..1.0, 1..4)), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jsonl_round_trip_and_rank_oracle(raw in rows_strategy()) {
        let mut b = TabularBenchmark::new();
        let mut seen = std::collections::HashSet::new();
        for (id, accs) in &raw {
            if !seen.insert(*id) {
                continue;
            }
            b.insert(BenchRow {
                genotype: format!("g{id}"),
                results: accs.iter().enumerate().map(|(s, &a)| SeedResult { seed: s as u64, val_acc: a, test_acc: 1.0 - a }).collect(),
                params: None,
                flops: None,
                proxy: None,
            }).unwrap();
        }
        let mut buf = vec![];
        b.write_to(&mut buf).unwrap();
        let back = TabularBenchmark::from_reader(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &b);
        // rank = 1 + number of strictly better means, by sorting
        let mut means: Vec<f64> = b.rows().iter().map(|r| r.mean_val_acc()).collect();
        means.sort_by(|x, y| y.total_cmp(x));
        for r in b.rows() {
            let q = b.query(&r.genotype).unwrap();
            let want = means.iter().position(|&m| m == r.mean_val_acc()).unwrap() + 1;
            prop_assert_eq!(q.rank, want);
            prop_assert_eq!(q.space_size, b.len());
        }
    }
}

#[test]
fn zero_noise_samples_equal_their_class_pattern() {
    let cfg = SynthDatasetCfg {
        samples_per_class: 12,
        image_size: 4,
        noise: 0.0,
        ..Default::default()
    };
    let d = synth_dataset(&cfg).unwrap();
    let mut first: std::collections::HashMap<usize, Vec<f64>> = Default::default();
    for split in [&d.train, &d.val, &d.test] {
        for (i, &y) in split.labels.iter().enumerate() {
            let x = split.inputs.sample(i).to_vec();
            assert_eq!(first.entry(y).or_insert_with(|| x.clone()), &x);
        }
    }
    assert_eq!(first.len(), 4);
}

#[test]
fn duplicate_seed_records_are_rejected() {
    let two = "{\"genotype\":\"a\",\"results\":[{\"seed\":0,\"val_acc\":0.5,\"test_acc\":0.4}]}\n\
               {\"genotype\":\"b\",\"results\":[{\"seed\":0,\"val_acc\":0.6,\"test_acc\":0.5}]}\n";
    assert_eq!(TabularBenchmark::from_reader(two.as_bytes()).unwrap().len(), 2);
    let dup = "{\"genotype\":\"a\",\"results\":[{\"seed\":0,\"val_acc\":0.5,\"test_acc\":0.4},{\"seed\":0,\"val_acc\":0.5,\"test_acc\":0.4}]}\n";
    assert!(TabularBenchmark::from_reader(dup.as_bytes()).is_err());
    let range = "{\"genotype\":\"a\",\"results\":[{\"seed\":0,\"val_acc\":1.5,\"test_acc\":0.4}]}\n";
    assert!(matches!(TabularBenchmark::from_reader(range.as_bytes()), Err(Error::Parse { line: 1, .. })));
}
