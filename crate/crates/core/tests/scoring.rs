use proptest::prelude::*;
use zcpt_core::proxies::ProxyId;
use zcpt_core::scoring::{
    correlate_tables, initial_analysis, oracle_scores, progressive_analysis, spearman, AnalysisContext, Direction,
    OracleMode, OracleTable, Policy, ProxyEvaluator, RawScoreTable, ScoreTable, Trajectory,
};
use zcpt_core::search::{greedy_discretize, EdgeOrder};
use zcpt_core::space::EdgeState;
use zcpt_core::tabular::{synth_dataset, toy_benchmark, toy_space, MiniBenchCfg};
use zcpt_core::{ArchState, Error, OpId};

const TOL: f64 = 1e-12;

fn fixture_rho(method: &str, against: &str) -> (Vec<Option<f64>>, f64) {
    let raw = RawScoreTable::bundled();
    let c = correlate_tables(raw.table(method).unwrap(), raw.table(against).unwrap()).unwrap();
    (c.per_edge.iter().map(|p| p.1).collect(), c.average.unwrap())
}

#[test]
fn fixture_zc_pt_per_edge_against_best_acc() {
    let (per_edge, avg) = fixture_rho("zc-pt", "best-acc");
    let expected = [1.0, 0.9, 0.8, 0.3, 0.7, 0.9];
    for (got, want) in per_edge.iter().zip(expected) {
        assert!((got.unwrap() - want).abs() < TOL, "{got:?} vs {want}");
    }
    assert_eq!(per_edge[0], Some(1.0));
    assert!((avg - 0.7666666666666665).abs() < TOL);
}

#[test]
fn fixture_edge_averages_against_best_acc() {
    for (method, want) in [
        ("disc-zc", 0.1),
        ("darts", 0.18419927840283845),
        ("disc-acc", -0.31666666666666665),
        ("darts-pt", 0.4166666666666666),
        ("tenas", 0.4350652234723436),
        ("avg-acc", 0.5),
        ("best-acc", 1.0),
    ] {
        let (_, avg) = fixture_rho(method, "best-acc");
        assert!((avg - want).abs() < TOL, "{method}: {avg} vs {want}");
    }
}

#[test]
fn fixture_edge_averages_against_avg_acc() {
    for (method, want) in [
        ("zc-pt", 0.6833333333333333),
        ("disc-acc", -0.5833333333333333),
        ("darts-pt", 0.5666666666666667),
    ] {
        let (_, avg) = fixture_rho(method, "avg-acc");
        assert!((avg - want).abs() < 1e-9, "{method}: {avg} vs {want}");
    }
}

/// Spearman's rho from its definition: average ranks, then Pearson.
fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let eq = v.iter().filter(|b| *b == a).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_edge_cases() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
    assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::TooShort(_))));
    assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch(..))));
    assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
}

proptest! {
    #[test]
    fn spearman_matches_definition(pairs in prop::collection::vec((0i32..6, 0i32..6), 3..12)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let want = spearman_oracle(&x, &y);
        match spearman(&x, &y) {
            Ok(r) => prop_assert!((r - want).abs() < 1e-12, "{} vs {}", r, want),
            Err(Error::ZeroVariance) => prop_assert!(!want.is_finite()),
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn spearman_is_symmetric_and_rank_invariant(xs in prop::collection::vec(-50.0f64..50.0, 4..10), ys in prop::collection::vec(-50.0f64..50.0, 10)) {
        let ys = &ys[..xs.len()];
        if let Ok(r) = spearman(&xs, ys) {
            prop_assert!((r - spearman(ys, &xs).unwrap()).abs() < 1e-12);
            let cubed: Vec<f64> = xs.iter().map(|v| v.powi(3) + 7.0).collect();
            prop_assert!((r - spearman(&cubed, ys).unwrap()).abs() < 1e-12);
        }
    }
}

/// Exhaustive oracle: filter the benchmark rows by hand.
fn brute_force(a: &ArchState, mode: OracleMode) -> Option<f64> {
    let bench = toy_benchmark();
    let space = toy_space();
    let vals: Vec<f64> = bench
        .rows()
        .iter()
        .filter(|r| {
            let full = ArchState::from_genotype(&space, &r.genotype).unwrap();
            a.edge_states().iter().zip(full.edge_states()).all(|(p, f)| match (p, f) {
                (EdgeState::Mixed(s), EdgeState::Fixed(o)) => s.contains(*o),
                (p, f) => p == f,
            })
        })
        .map(|r| match mode {
            OracleMode::BestZc(p) => r.proxy.as_ref().unwrap()[p.name()],
            _ => r.mean_val_acc(),
        })
        .collect();
    if vals.is_empty() {
        return None;
    }
    Some(match mode {
        OracleMode::AvgAcc => vals.iter().sum::<f64>() / vals.len() as f64,
        _ => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn partial_state(spec: &[(u8, u8)]) -> ArchState {
    let space = toy_space();
    let ops = space.ops();
    let mut a = space.supernet();
    for (e, &(kind, k)) in spec.iter().enumerate() {
        let o = ops[k as usize % ops.len()];
        a = match kind % 3 {
            0 => a,
            1 => a.discretize(e, o).unwrap(),
            _ => a.perturb(e, o).unwrap(),
        };
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_aggregates_match_brute_force(spec in prop::collection::vec((0u8..3, 0u8..3), 4)) {
        let table = OracleTable::new(&toy_benchmark(), &toy_space()).unwrap();
        let a = partial_state(&spec);
        for mode in [OracleMode::BestAcc, OracleMode::AvgAcc, OracleMode::BestZc(ProxyId::Nwot)] {
            let want = brute_force(&a, mode).unwrap();
            prop_assert_eq!(table.aggregate(&a, mode).unwrap(), want);
        }
    }
}

#[test]
fn oracle_rows_cover_active_ops() {
    let table = OracleTable::new(&toy_benchmark(), &toy_space()).unwrap();
    let a = toy_space().supernet().perturb(1, OpId::Skip).unwrap();
    let t = oracle_scores(&table, &a, 1, OracleMode::BestAcc).unwrap();
    assert_eq!(t.row(1).unwrap().iter().map(|p| p.0).collect::<Vec<_>>(), vec![OpId::Conv1x1, OpId::Conv3x3]);
    assert!(oracle_scores(&table, &a.discretize(0, OpId::Skip).unwrap(), 0, OracleMode::BestAcc).is_err());
    assert!(matches!(
        table.aggregate(&a, OracleMode::BestZc(ProxyId::Snip)),
        Err(Error::MissingInput { .. })
    ));
}

fn oracle_scorer(table: &OracleTable) -> impl FnMut(&ArchState, &[usize], usize) -> zcpt_core::Result<ScoreTable> + '_ {
    move |a, edges, _| {
        let mut t = ScoreTable::new("best-acc", a.t(), Direction::HigherBetter);
        for &e in edges {
            let r = oracle_scores(table, a, e, OracleMode::BestAcc)?;
            t.insert_row(e, r.row(e).unwrap().to_vec())?;
        }
        Ok(t)
    }
}

#[test]
fn greedy_best_acc_reaches_the_global_optimum_in_every_order() {
    let bench = toy_benchmark();
    let table = OracleTable::new(&bench, &toy_space()).unwrap();
    let best = bench.best().unwrap();
    assert_eq!(bench.rows().iter().filter(|r| r.mean_val_acc() == best.mean_val_acc()).count(), 1);
    for order in EdgeOrder::ALL {
        let out = greedy_discretize(&toy_space().supernet(), order, 5, oracle_scorer(&table)).unwrap();
        assert_eq!(out.state.genotype().unwrap().as_str(), best.genotype, "{order}");
    }
}

#[test]
fn avg_acc_correlates_with_best_acc_on_the_toy_benchmark() {
    let table = OracleTable::new(&toy_benchmark(), &toy_space()).unwrap();
    let ctx = AnalysisContext {
        oracle: &table,
        evaluator: None,
        proxy: ProxyId::Nwot,
    };
    let r = initial_analysis(&ctx, &toy_space().supernet(), &[Policy::BestAcc, Policy::AvgAcc], &[0]).unwrap();
    assert_eq!(r.average("best-acc", "best-acc", 0, Some(0)), Some(1.0));
    assert!(r.average("best-acc", "avg-acc", 0, None).unwrap() > 0.0);
    let csv = r.to_csv_string();
    assert!(csv.starts_with("method_a,method_b,iteration,edge,rho,seed\n"));
    assert!(csv.contains("best-acc,avg-acc,0,avg,"));
}

#[test]
fn progressive_zc_pt_runs_for_four_seeds() {
    let table = OracleTable::new(&toy_benchmark(), &toy_space()).unwrap();
    let cfg = MiniBenchCfg::toy();
    let data = synth_dataset(&cfg.data).unwrap();
    let ev = ProxyEvaluator::new(cfg.net(0), data.train);
    let ctx = AnalysisContext {
        oracle: &table,
        evaluator: Some(&ev),
        proxy: ProxyId::Nwot,
    };
    let seeds = [0, 1, 2, 3];
    for traj in [Trajectory::Oracle, Trajectory::SelfPolicy] {
        let r = progressive_analysis(&ctx, &toy_space().supernet(), Policy::ZcPt, traj, &seeds).unwrap();
        for i in 0..4 {
            for &s in &seeds {
                assert!(r.rows.iter().any(|row| row.iteration == i && row.seed == Some(s) && row.edge.is_none()));
            }
        }
        let again = progressive_analysis(&ctx, &toy_space().supernet(), Policy::ZcPt, traj, &seeds).unwrap();
        assert_eq!(r, again);
    }
}

#[test]
fn zc_tables_have_declared_directions() {
    let cfg = MiniBenchCfg::toy();
    let data = synth_dataset(&cfg.data).unwrap();
    let ev = ProxyEvaluator::new(cfg.net(0), data.train);
    let a = toy_space().supernet();
    let (pt, e1) = ev.zc_pt_table(&a, &[0, 2], ProxyId::Synflow, 3).unwrap();
    let (dz, _) = ev.disc_zc_table(&a, &[0], ProxyId::Synflow, 3).unwrap();
    assert_eq!(pt.direction, Direction::LowerBetter);
    assert_eq!(dz.direction, Direction::HigherBetter);
    assert_eq!(e1.values.len(), 6);
    // a perturbed state is scored exactly like instantiating it directly
    let direct = ev.score_states(&[a.perturb(2, OpId::Conv1x1).unwrap()], ProxyId::Synflow, 3).unwrap();
    assert_eq!(pt.get(2, OpId::Conv1x1), Some(direct.values[0]));
    let single = a.discretize(0, OpId::Skip).unwrap();
    assert!(matches!(ev.zc_pt_table(&single, &[0], ProxyId::Synflow, 0), Err(Error::EdgeNotMixed(0))));
}
