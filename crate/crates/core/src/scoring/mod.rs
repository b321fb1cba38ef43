//! Operation-scoring policies, rank statistics and correlation analyses.
//!
//! A [`ScoreTable`] holds `f(A_t, e, o)` for every mixed edge `e` and active
//! operation `o`. Zero-cost policies come from [`ProxyEvaluator`], oracle
//! policies from an [`OracleTable`] over a tabular benchmark.

mod analysis;
mod fixture;
mod oracle;
mod stats;
mod zc;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::OpId;

pub use analysis::{
    correlate_tables, initial_analysis, progressive_analysis, AnalysisContext, CorrelationReport,
    CorrelationRow, EdgeCorrelation, Policy, Trajectory,
};
pub use fixture::RawScoreTable;
pub use oracle::{oracle_scores, OracleMode, OracleTable};
pub use stats::{average_ranks, spearman};
pub use zc::{disc_zc_scores, zc_pt_scores, Evaluation, ProxyEvaluator, MAX_RETRIES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Per-edge, per-operation scores. Rows list operations in declared order,
/// which is also the tie-break order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub policy: String,
    /// Discretization step at which the scores were taken.
    pub t: usize,
    pub direction: Direction,
    rows: BTreeMap<usize, Vec<(OpId, f64)>>,
}

impl ScoreTable {
    pub fn new(policy: impl Into<String>, t: usize, direction: Direction) -> Self {
        ScoreTable {
            policy: policy.into(),
            t,
            direction,
            rows: BTreeMap::new(),
        }
    }

    /// Insert (or replace) the row of edge `e`; ops are sorted into declared
    /// order.
    pub fn insert_row(&mut self, e: usize, mut row: Vec<(OpId, f64)>) -> Result<()> {
        if row.is_empty() {
            return Err(Error::NoCandidates);
        }
        row.sort_by_key(|p| p.0);
        if row.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config(format!("edge {e} lists an operation twice")));
        }
        self.rows.insert(e, row);
        Ok(())
    }

    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn row(&self, e: usize) -> Option<&[(OpId, f64)]> {
        self.rows.get(&e).map(|r| r.as_slice())
    }

    pub fn get(&self, e: usize, o: OpId) -> Option<f64> {
        self.row(e)?.iter().find(|p| p.0 == o).map(|p| p.1)
    }

    /// Row values flipped so that higher is always better.
    pub fn oriented(&self, e: usize) -> Option<Vec<(OpId, f64)>> {
        let sign = match self.direction {
            Direction::HigherBetter => 1.0,
            Direction::LowerBetter => -1.0,
        };
        Some(self.row(e)?.iter().map(|&(o, v)| (o, sign * v)).collect())
    }

    /// The selected operation of edge `e`: argmax for higher-better tables,
    /// argmin for lower-better ones; the first declared op wins ties.
    pub fn best(&self, e: usize) -> Result<OpId> {
        let row = self.oriented(e).ok_or(Error::EdgeOutOfRange(e))?;
        let mut best = row[0];
        for &(o, v) in &row[1..] {
            if v > best.1 {
                best = (o, v);
            }
        }
        Ok(best.0)
    }

    /// The best entry over every edge as `(edge, op, oriented value)`; the
    /// lowest edge index wins ties.
    pub fn global_best(&self) -> Option<(usize, OpId, f64)> {
        let mut out: Option<(usize, OpId, f64)> = None;
        for e in self.edges() {
            for (o, v) in self.oriented(e)? {
                if out.is_none_or(|b| v > b.2) {
                    out = Some((e, o, v));
                }
            }
        }
        out
    }

    /// The edge with the best mean oriented score (lowest index on ties).
    pub fn best_mean_edge(&self) -> Option<usize> {
        let mut out: Option<(usize, f64)> = None;
        for e in self.edges() {
            let row = self.oriented(e)?;
            let m = row.iter().map(|p| p.1).sum::<f64>() / row.len() as f64;
            if out.is_none_or(|b| m > b.1) {
                out = Some((e, m));
            }
        }
        out.map(|b| b.0)
    }
}
