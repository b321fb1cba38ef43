use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Direction, ScoreTable};
use crate::error::{Error, Result};
use crate::proxies::ProxyId;
use crate::space::{ArchState, EdgeState, OpId, Space};
use crate::tabular::TabularBenchmark;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OracleMode {
    /// Best mean accuracy among completions.
    BestAcc,
    /// Average mean accuracy over completions.
    AvgAcc,
    /// Best stored proxy score among completions.
    BestZc(ProxyId),
}

impl OracleMode {
    pub fn name(self) -> String {
        match self {
            OracleMode::BestAcc => "best-acc".into(),
            OracleMode::AvgAcc => "avg-acc".into(),
            OracleMode::BestZc(p) => format!("best-zc({p})"),
        }
    }
}

struct Entry {
    edges: Vec<EdgeState>,
    acc: f64,
    proxy: BTreeMap<String, f64>,
}

/// A benchmark parsed against a space, ready for completion queries.
pub struct OracleTable {
    space: Space,
    entries: Vec<Entry>,
}

fn consistent(partial: &[EdgeState], full: &[EdgeState]) -> bool {
    partial.iter().zip(full).all(|(p, f)| match (p, f) {
        (EdgeState::Mixed(s), EdgeState::Fixed(o)) => s.contains(*o),
        (EdgeState::Mixed(_), EdgeState::Removed) => true,
        (a, b) => a == b,
    })
}

impl OracleTable {
    /// Requires `bench` to be complete over `space`.
    pub fn new(bench: &TabularBenchmark, space: &Space) -> Result<Self> {
        bench.check_complete(space)?;
        let entries = bench
            .rows()
            .iter()
            .map(|r| {
                Ok(Entry {
                    edges: ArchState::from_genotype(space, &r.genotype)?.edge_states().to_vec(),
                    acc: r.mean_val_acc(),
                    proxy: r.proxy.clone().unwrap_or_default(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(OracleTable {
            space: space.clone(),
            entries,
        })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Aggregate over every benchmark genotype reachable from `a`.
    pub fn aggregate(&self, a: &ArchState, mode: OracleMode) -> Result<f64> {
        let mut n = 0usize;
        let mut acc = match mode {
            OracleMode::AvgAcc => 0.0,
            _ => f64::NEG_INFINITY,
        };
        for en in self.entries.iter().filter(|en| consistent(a.edge_states(), &en.edges)) {
            let v = match mode {
                OracleMode::BestZc(p) => *en.proxy.get(p.name()).ok_or_else(|| Error::MissingInput {
                    proxy: format!("best-zc({p})"),
                    what: "stored proxy scores in the benchmark".into(),
                })?,
                _ => en.acc,
            };
            n += 1;
            acc = match mode {
                OracleMode::AvgAcc => acc + v,
                _ => acc.max(v),
            };
        }
        if n == 0 {
            return Err(Error::NoMatch);
        }
        Ok(match mode {
            OracleMode::AvgAcc => acc / n as f64,
            _ => acc,
        })
    }
}

/// Oracle scores of edge `e`: for each active op, aggregate the benchmark
/// over all completions of `a + (e, o)`. Higher is better.
pub fn oracle_scores(table: &OracleTable, a: &ArchState, e: usize, mode: OracleMode) -> Result<ScoreTable> {
    let EdgeState::Mixed(set) = a.edge(e)? else {
        return Err(Error::EdgeNotMixed(e));
    };
    let row = set
        .iter()
        .map(|o| Ok((o, table.aggregate(&a.discretize(e, o)?, mode)?)))
        .collect::<Result<Vec<(OpId, f64)>>>()?;
    let mut t = ScoreTable::new(mode.name(), a.t(), Direction::HigherBetter);
    t.insert_row(e, row)?;
    Ok(t)
}
