use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ArchState, Space};

/// One training run of one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// One JSONL line: every recorded run of a genotype plus optional metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub genotype: String,
    pub results: Vec<SeedResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<BTreeMap<String, f64>>,
}

impl BenchRow {
    pub fn mean_val_acc(&self) -> f64 {
        self.results.iter().map(|r| r.val_acc).sum::<f64>() / self.results.len() as f64
    }

    pub fn mean_test_acc(&self) -> f64 {
        self.results.iter().map(|r| r.test_acc).sum::<f64>() / self.results.len() as f64
    }
}

/// Result of [`TabularBenchmark::query`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryStats {
    pub genotype: String,
    pub mean_val_acc: f64,
    pub mean_test_acc: f64,
    pub val_accs: Vec<f64>,
    /// 1 = best mean validation accuracy; ties share the better rank.
    pub rank: usize,
    pub space_size: usize,
}

/// Genotype -> trained accuracies table. Rows keep insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TabularBenchmark {
    rows: Vec<BenchRow>,
    index: HashMap<String, usize>,
}

fn validate_row(row: &BenchRow) -> Result<()> {
    if row.results.is_empty() {
        return Err(Error::Incomplete(format!("{} has no seed results", row.genotype)));
    }
    let mut seen = HashSet::new();
    for r in &row.results {
        for acc in [r.val_acc, r.test_acc] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::AccuracyRange(acc));
            }
        }
        if !seen.insert(r.seed) {
            return Err(Error::Duplicate {
                genotype: row.genotype.clone(),
                seed: r.seed,
            });
        }
    }
    Ok(())
}

impl TabularBenchmark {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a row, merging seed results for a genotype seen before.
    pub fn insert(&mut self, row: BenchRow) -> Result<()> {
        validate_row(&row)?;
        if let Some(&i) = self.index.get(&row.genotype) {
            let existing = &mut self.rows[i];
            for r in row.results {
                if existing.results.iter().any(|e| e.seed == r.seed) {
                    return Err(Error::Duplicate {
                        genotype: row.genotype.clone(),
                        seed: r.seed,
                    });
                }
                existing.results.push(r);
            }
            return Ok(());
        }
        self.index.insert(row.genotype.clone(), self.rows.len());
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[BenchRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, genotype: &str) -> Option<&BenchRow> {
        self.index.get(genotype).map(|&i| &self.rows[i])
    }

    pub fn num_records(&self) -> usize {
        self.rows.iter().map(|r| r.results.len()).sum()
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut bench = TabularBenchmark::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: BenchRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            bench.insert(row).map_err(|e| match e {
                Error::Duplicate { .. } | Error::AccuracyRange(_) | Error::Incomplete(_) => Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(bench)
    }

    /// Read a JSONL benchmark file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    /// Load and additionally require completeness over `space`.
    pub fn load_for_space(path: impl AsRef<Path>, space: &Space) -> Result<Self> {
        let b = Self::load(path)?;
        b.check_complete(space)?;
        Ok(b)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            let line = serde_json::to_string(row).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Every genotype of `space` must be present, and only those.
    pub fn check_complete(&self, space: &Space) -> Result<()> {
        for row in &self.rows {
            ArchState::from_genotype(space, &row.genotype)
                .map_err(|e| Error::Incomplete(format!("{}: {e}", row.genotype)))?;
        }
        let expected = space.size();
        if expected != Some(self.rows.len() as u128) {
            return Err(Error::Incomplete(format!(
                "{} genotypes recorded, space holds {}",
                self.rows.len(),
                expected.map_or("too many".to_string(), |n| n.to_string())
            )));
        }
        for g in space.enumerate() {
            if self.get(g.as_str()).is_none() {
                return Err(Error::Incomplete(format!("missing {g}")));
            }
        }
        Ok(())
    }

    pub fn query(&self, genotype: &str) -> Result<QueryStats> {
        let row = self
            .get(genotype)
            .ok_or_else(|| Error::UnknownGenotype(genotype.to_string()))?;
        let mean = row.mean_val_acc();
        let better = self.rows.iter().filter(|r| r.mean_val_acc() > mean).count();
        Ok(QueryStats {
            genotype: genotype.to_string(),
            mean_val_acc: mean,
            mean_test_acc: row.mean_test_acc(),
            val_accs: row.results.iter().map(|r| r.val_acc).collect(),
            rank: better + 1,
            space_size: self.rows.len(),
        })
    }

    /// Genotype with the highest mean validation accuracy (first on ties).
    pub fn best(&self) -> Option<&BenchRow> {
        self.rows.iter().fold(None, |best: Option<&BenchRow>, r| match best {
            Some(b) if b.mean_val_acc() >= r.mean_val_acc() => Some(b),
            _ => Some(r),
        })
    }
}
