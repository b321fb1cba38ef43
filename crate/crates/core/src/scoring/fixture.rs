use std::io::Read;

use super::{correlate_tables, CorrelationReport, Direction, ScoreTable};
use crate::error::{Error, Result};
use crate::space::Space;

const BUNDLED: &str = include_str!("../../data/raw_scores_iter0.csv");

/// Static per-edge operation scores of several methods on the NB201 cell,
/// as a CSV `method,edge,<op>,<op>,...`. Values are taken as higher-better
/// exactly as stored (lower-better methods are stored negated).
#[derive(Clone, Debug, PartialEq)]
pub struct RawScoreTable {
    methods: Vec<String>,
    tables: Vec<ScoreTable>,
}

impl RawScoreTable {
    /// Raw scores of eight methods at iteration 0 on the NB201 cell.
    pub fn bundled() -> Self {
        Self::from_reader(BUNDLED.as_bytes()).expect("bundled table parses")
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let space = Space::nb201();
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
        if header.len() < 4 || &header[0] != "method" || &header[1] != "edge" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header method,edge,<ops...>".into(),
            });
        }
        let ops = header
            .iter()
            .skip(2)
            .map(|h| space.parse_op(h))
            .collect::<Result<Vec<_>>>()?;
        let mut methods: Vec<String> = vec![];
        let mut tables: Vec<ScoreTable> = vec![];
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let bad = |msg: String| Error::Parse { line, msg };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != ops.len() + 2 {
                return Err(bad(format!("expected {} fields", ops.len() + 2)));
            }
            let method = rec[0].to_string();
            let edge: usize = rec[1].parse().map_err(|_| bad(format!("bad edge {:?}", &rec[1])))?;
            if edge >= space.num_edges() {
                return Err(bad(format!("edge {edge} out of range")));
            }
            let row = ops
                .iter()
                .zip(rec.iter().skip(2))
                .map(|(&o, v)| Ok((o, v.trim().parse::<f64>().map_err(|_| bad(format!("bad value {v:?}")))?)))
                .collect::<Result<Vec<_>>>()?;
            let k = match methods.iter().position(|m| *m == method) {
                Some(k) => k,
                None => {
                    methods.push(method.clone());
                    tables.push(ScoreTable::new(method, 0, Direction::HigherBetter));
                    tables.len() - 1
                }
            };
            if tables[k].row(edge).is_some() {
                return Err(bad(format!("edge {edge} of {} listed twice", methods[k])));
            }
            tables[k].insert_row(edge, row)?;
        }
        Ok(RawScoreTable { methods, tables })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn table(&self, method: &str) -> Option<&ScoreTable> {
        self.methods.iter().position(|m| m == method).map(|k| &self.tables[k])
    }

    /// Per-edge and edge-averaged correlations of every pair `(a, b)` of
    /// `methods` with `a` listed no later than `b`, at iteration 0.
    pub fn correlations(&self, methods: &[String]) -> Result<CorrelationReport> {
        let tables = methods
            .iter()
            .map(|m| self.table(m).ok_or_else(|| Error::Config(format!("method {m:?} not in the score table"))))
            .collect::<Result<Vec<_>>>()?;
        let mut report = CorrelationReport::default();
        for i in 0..tables.len() {
            for j in i..tables.len() {
                let c = correlate_tables(tables[i], tables[j])?;
                report.push(&methods[i], &methods[j], 0, None, &c);
            }
        }
        Ok(report)
    }
}
