//! Selected-architecture tables: run a scoring policy (or the full search)
//! per seed, look the result up in a benchmark, and summarise test error and
//! rank per method.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scoring::{AnalysisContext, Policy};
use crate::search::{greedy_discretize, zero_cost_pt, EdgeOrder, SearchConfig};
use crate::space::{ArchState, Genotype};
use crate::tabular::TabularBenchmark;

/// A way of choosing one architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Greedy discretization under a scoring policy.
    Greedy(Policy),
    /// Proposal and validation stages of the full search.
    ZeroCostPt,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Greedy(p) => p.name(),
            Method::ZeroCostPt => "zero-cost-pt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "zero-cost-pt" {
            return Ok(Method::ZeroCostPt);
        }
        Ok(Method::Greedy(s.parse()?))
    }
}

/// Discretize `a0` greedily in `order`, each edge taking the best op under
/// `policy`.
pub fn select_with_policy(ctx: &AnalysisContext, a0: &ArchState, policy: Policy, order: EdgeOrder, seed: u64) -> Result<Genotype> {
    let out = greedy_discretize(a0, order, seed, |a, edges, _| ctx.table(a, edges, policy, seed))?;
    out.state.genotype()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub method: String,
    pub seed: u64,
    pub genotype: Genotype,
    pub test_error: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub avg_error: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std_error: f64,
    pub avg_rank: f64,
}

/// One selection per method and seed. `search` supplies N, V, order and
/// batch size for [`Method::ZeroCostPt`]; its seed and proxy are replaced by
/// the run seed and the context's proxy.
pub fn selections(
    ctx: &AnalysisContext,
    bench: &TabularBenchmark,
    a0: &ArchState,
    methods: &[Method],
    order: EdgeOrder,
    seeds: &[u64],
    search: &SearchConfig,
) -> Result<Vec<Selection>> {
    let mut out = vec![];
    for &m in methods {
        for &seed in seeds {
            let genotype = match m {
                Method::Greedy(p) => select_with_policy(ctx, a0, p, order, seed)?,
                Method::ZeroCostPt => {
                    let ev = ctx.evaluator.ok_or_else(|| Error::MissingInput {
                        proxy: m.name().into(),
                        what: "a proxy evaluator".into(),
                    })?;
                    let cfg = SearchConfig {
                        seed,
                        proxy: ctx.proxy,
                        ..search.clone()
                    };
                    zero_cost_pt(a0, &cfg, ev)?.0
                }
            };
            let q = bench.query(genotype.as_str())?;
            out.push(Selection {
                method: m.name().into(),
                seed,
                genotype,
                test_error: 1.0 - q.mean_test_acc,
                rank: q.rank,
            });
        }
    }
    Ok(out)
}

/// Mean and spread of test error and mean rank per method, in first-seen
/// order.
pub fn summarize(sel: &[Selection]) -> Vec<MethodSummary> {
    let mut names: Vec<&str> = vec![];
    for s in sel {
        if !names.contains(&s.method.as_str()) {
            names.push(&s.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&Selection> = sel.iter().filter(|s| s.method == name).collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|s| s.test_error).sum::<f64>() / n;
            let var = if rows.len() > 1 {
                rows.iter().map(|s| (s.test_error - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            MethodSummary {
                method: name.to_string(),
                avg_error: mean,
                std_error: var.sqrt(),
                avg_rank: rows.iter().map(|s| s.rank as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// CSV `method,avg_error,std_error,avg_rank`.
pub fn write_summary_csv<W: Write>(rows: &[MethodSummary], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(["method", "avg_error", "std_error", "avg_rank"]).map_err(io)?;
    for r in rows {
        wr.write_record([
            r.method.clone(),
            r.avg_error.to_string(),
            r.std_error.to_string(),
            r.avg_rank.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}
