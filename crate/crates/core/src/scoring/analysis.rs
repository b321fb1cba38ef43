use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{oracle_scores, spearman, OracleMode, OracleTable, ProxyEvaluator, ScoreTable};
use crate::error::{Error, Result};
use crate::proxies::ProxyId;
use crate::rng;
use crate::space::ArchState;

/// An operation-scoring policy available to the analyses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    BestAcc,
    AvgAcc,
    BestZc,
    ZcPt,
    DiscZc,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::BestAcc, Policy::AvgAcc, Policy::BestZc, Policy::ZcPt, Policy::DiscZc];

    pub fn name(self) -> &'static str {
        match self {
            Policy::BestAcc => "best-acc",
            Policy::AvgAcc => "avg-acc",
            Policy::BestZc => "best-zc",
            Policy::ZcPt => "zc-pt",
            Policy::DiscZc => "disc-zc",
        }
    }

    pub fn needs_evaluator(self) -> bool {
        matches!(self, Policy::ZcPt | Policy::DiscZc)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// Which operation fixes edge `i` between progressive iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trajectory {
    /// The best-acc oracle's choice, so every policy sees the same states.
    Oracle,
    /// The analyzed policy's own choice.
    SelfPolicy,
}

/// Inputs shared by the correlation analyses.
pub struct AnalysisContext<'a> {
    pub oracle: &'a OracleTable,
    /// Needed by zero-cost policies; its init seed is replaced per analysis
    /// seed.
    pub evaluator: Option<&'a ProxyEvaluator>,
    pub proxy: ProxyId,
}

impl AnalysisContext<'_> {
    /// Scores of `policy` on `edges` of `a`. Zero-cost policies use `seed`
    /// as the supernet init seed.
    pub fn table(&self, a: &ArchState, edges: &[usize], policy: Policy, seed: u64) -> Result<ScoreTable> {
        let oracle_mode = match policy {
            Policy::BestAcc => Some(OracleMode::BestAcc),
            Policy::AvgAcc => Some(OracleMode::AvgAcc),
            Policy::BestZc => Some(OracleMode::BestZc(self.proxy)),
            _ => None,
        };
        if let Some(mode) = oracle_mode {
            let mut t = ScoreTable::new(policy.name(), a.t(), super::Direction::HigherBetter);
            for &e in edges {
                let r = oracle_scores(self.oracle, a, e, mode)?;
                t.insert_row(e, r.row(e).expect("row just built").to_vec())?;
            }
            return Ok(t);
        }
        let base = self.evaluator.ok_or_else(|| Error::MissingInput {
            proxy: policy.name().into(),
            what: "a proxy evaluator".into(),
        })?;
        let mut ev = base.clone();
        ev.net.init_seed = seed;
        let batch_seed = rng::hash64(rng::hash_str(seed, "analysis"), a.t() as u64);
        let (t, _) = match policy {
            Policy::ZcPt => ev.zc_pt_table(a, edges, self.proxy, batch_seed)?,
            _ => ev.disc_zc_table(a, edges, self.proxy, batch_seed)?,
        };
        Ok(t)
    }
}

/// Per-edge rank correlations of two tables and their average.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeCorrelation {
    /// `None` where the correlation is undefined (fewer than two shared
    /// ops, or all values tied).
    pub per_edge: Vec<(usize, Option<f64>)>,
    /// Mean over the defined edges.
    pub average: Option<f64>,
}

/// Correlate two tables edge by edge on their oriented (higher-better)
/// values.
pub fn correlate_tables(a: &ScoreTable, b: &ScoreTable) -> Result<EdgeCorrelation> {
    let mut per_edge = vec![];
    for e in a.edges() {
        let (Some(ra), Some(rb)) = (a.oriented(e), b.oriented(e)) else {
            continue;
        };
        let (xs, ys): (Vec<f64>, Vec<f64>) = ra
            .iter()
            .filter_map(|(o, x)| rb.iter().find(|p| p.0 == *o).map(|p| (*x, p.1)))
            .unzip();
        let rho = match spearman(&xs, &ys) {
            Ok(r) => Some(r),
            Err(Error::ZeroVariance | Error::TooShort(_)) => None,
            Err(e) => return Err(e),
        };
        per_edge.push((e, rho));
    }
    let defined: Vec<f64> = per_edge.iter().filter_map(|p| p.1).collect();
    let average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EdgeCorrelation { per_edge, average })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub method_a: String,
    pub method_b: String,
    pub iteration: usize,
    /// `None` marks the edge-averaged row.
    pub edge: Option<usize>,
    pub rho: Option<f64>,
    /// `None` for rows averaged over seeds (or seedless inputs).
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationReport {
    /// Append the per-edge rows and the average row of `c`.
    pub fn push(&mut self, a: &str, b: &str, iteration: usize, seed: Option<u64>, c: &EdgeCorrelation) {
        for &(e, rho) in &c.per_edge {
            self.rows.push(CorrelationRow {
                method_a: a.into(),
                method_b: b.into(),
                iteration,
                edge: Some(e),
                rho,
                seed,
            });
        }
        self.rows.push(CorrelationRow {
            method_a: a.into(),
            method_b: b.into(),
            iteration,
            edge: None,
            rho: c.average,
            seed,
        });
    }

    /// The edge-averaged value for a method pair, iteration and seed.
    pub fn average(&self, a: &str, b: &str, iteration: usize, seed: Option<u64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method_a == a && r.method_b == b && r.iteration == iteration && r.edge.is_none() && r.seed == seed)
            .and_then(|r| r.rho)
    }

    /// CSV with columns `method_a,method_b,iteration,edge,rho,seed`; the
    /// average row has edge `avg`, undefined values and seedless rows are
    /// empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        wr.write_record(["method_a", "method_b", "iteration", "edge", "rho", "seed"])
            .map_err(io)?;
        for r in &self.rows {
            wr.write_record([
                r.method_a.clone(),
                r.method_b.clone(),
                r.iteration.to_string(),
                r.edge.map_or("avg".into(), |e| e.to_string()),
                r.rho.map_or(String::new(), |v| v.to_string()),
                r.seed.map_or(String::new(), |s| s.to_string()),
            ])
            .map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = vec![];
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Mean over seeds of every per-seed row, appended as seedless rows.
    fn add_seed_means(&mut self) {
        let mut acc: BTreeMap<(String, String, usize, Option<usize>), (f64, usize)> = BTreeMap::new();
        let mut order = vec![];
        for r in self.rows.iter().filter(|r| r.seed.is_some()) {
            let key = (r.method_a.clone(), r.method_b.clone(), r.iteration, r.edge);
            let slot = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0.0, 0)
            });
            if let Some(v) = r.rho {
                slot.0 += v;
                slot.1 += 1;
            }
        }
        for key in order {
            let (s, n) = acc[&key];
            self.rows.push(CorrelationRow {
                method_a: key.0,
                method_b: key.1,
                iteration: key.2,
                edge: key.3,
                rho: (n > 0).then(|| s / n as f64),
                seed: None,
            });
        }
    }
}

/// Correlate every pair of policies (including each with itself) on the
/// supernet `a0`, per seed, then average over seeds.
pub fn initial_analysis(ctx: &AnalysisContext, a0: &ArchState, policies: &[Policy], seeds: &[u64]) -> Result<CorrelationReport> {
    let edges = a0.mixed_edges();
    let mut report = CorrelationReport::default();
    for &seed in seeds {
        let tables = policies
            .iter()
            .map(|&p| ctx.table(a0, &edges, p, seed))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..policies.len() {
            for j in i..policies.len() {
                let c = correlate_tables(&tables[i], &tables[j])?;
                report.push(policies[i].name(), policies[j].name(), a0.t(), Some(seed), &c);
            }
        }
    }
    report.add_seed_means();
    Ok(report)
}

/// At iteration `i`, correlate `policy` against best-acc over every mixed
/// edge, then fix edge `i` following `trajectory`.
pub fn progressive_analysis(
    ctx: &AnalysisContext,
    a0: &ArchState,
    policy: Policy,
    trajectory: Trajectory,
    seeds: &[u64],
) -> Result<CorrelationReport> {
    let mut report = CorrelationReport::default();
    for &seed in seeds {
        let mut state = a0.clone();
        for i in 0..a0.space().num_edges() {
            let edges = state.mixed_edges();
            if !edges.contains(&i) {
                continue;
            }
            let oracle = ctx.table(&state, &edges, Policy::BestAcc, seed)?;
            let scored = ctx.table(&state, &edges, policy, seed)?;
            let c = correlate_tables(&scored, &oracle)?;
            report.push(policy.name(), Policy::BestAcc.name(), i, Some(seed), &c);
            let op = match trajectory {
                Trajectory::Oracle => oracle.best(i)?,
                Trajectory::SelfPolicy => scored.best(i)?,
            };
            state = state.discretize(i, op)?;
        }
    }
    report.add_seed_means();
    Ok(report)
}
