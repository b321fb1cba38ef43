use std::sync::Arc;

use rayon::prelude::*;

use super::{Direction, ScoreTable};
use crate::autodiff::Graph;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::proxies::{compute_proxy_batched, ProxyId, DEFAULT_BATCH_SIZE};
use crate::rng;
use crate::space::{ArchState, EdgeState, NetConfig, OpId};

/// Retries with a fresh batch after a degenerate score.
pub const MAX_RETRIES: usize = 3;

/// Instantiates architecture states and scores them end to end with a
/// proxy, on minibatches drawn from `data`.
#[derive(Clone, Debug)]
pub struct ProxyEvaluator {
    pub net: NetConfig,
    pub data: Arc<Split>,
    pub batch_size: usize,
    pub max_retries: usize,
}

/// Scores of one shared-batch evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub values: Vec<f64>,
    pub batch_seed: u64,
    /// Degenerate batches skipped before this one.
    pub retries: usize,
}

impl ProxyEvaluator {
    pub fn new(net: NetConfig, data: Split) -> Self {
        ProxyEvaluator {
            net,
            data: Arc::new(data),
            batch_size: DEFAULT_BATCH_SIZE,
            max_retries: MAX_RETRIES,
        }
    }

    /// Batch seed of attempt `k` for a request seeded by `seed`.
    pub fn attempt_seed(seed: u64, k: usize) -> u64 {
        if k == 0 {
            seed
        } else {
            rng::hash64(seed, k as u64)
        }
    }

    pub fn instantiate(&self, states: &[ArchState]) -> Result<Vec<Graph>> {
        states.par_iter().map(|s| s.instantiate(&self.net)).collect()
    }

    /// Score all `states` on one minibatch. A degenerate score anywhere
    /// triggers a retry of the whole set on the next derived batch.
    pub fn score_states(&self, states: &[ArchState], proxy: ProxyId, seed: u64) -> Result<Evaluation> {
        let mut nets = self.instantiate(states)?;
        self.score_nets(&mut nets, proxy, seed)
    }

    /// [`score_states`](Self::score_states) on already instantiated nets.
    pub fn score_nets(&self, nets: &mut [Graph], proxy: ProxyId, seed: u64) -> Result<Evaluation> {
        for k in 0..=self.max_retries {
            let s = Self::attempt_seed(seed, k);
            let scores = compute_proxy_batched(nets, proxy, Some(&self.data), self.batch_size, s)?;
            if scores.iter().all(|p| !p.degenerate) {
                return Ok(Evaluation {
                    values: scores.iter().map(|p| p.value).collect(),
                    batch_seed: s,
                    retries: k,
                });
            }
        }
        Err(Error::Degenerate(self.max_retries + 1))
    }

    fn table(
        &self,
        a: &ArchState,
        edges: &[usize],
        proxy: ProxyId,
        seed: u64,
        perturb: bool,
    ) -> Result<(ScoreTable, Evaluation)> {
        let mut states = vec![];
        let mut keys = vec![];
        for &e in edges {
            let EdgeState::Mixed(set) = a.edge(e)? else {
                return Err(Error::EdgeNotMixed(e));
            };
            if perturb && set.len() < 2 {
                return Err(Error::LastOp(e));
            }
            for o in set.iter() {
                states.push(if perturb { a.perturb(e, o)? } else { a.discretize(e, o)? });
                keys.push((e, o));
            }
        }
        let ev = self.score_states(&states, proxy, seed)?;
        let (name, dir) = if perturb {
            ("zc-pt", Direction::LowerBetter)
        } else {
            ("disc-zc", Direction::HigherBetter)
        };
        let mut table = ScoreTable::new(name, a.t(), dir);
        for &e in edges {
            let row: Vec<(OpId, f64)> = keys
                .iter()
                .zip(&ev.values)
                .filter(|((k, _), _)| *k == e)
                .map(|((_, o), v)| (*o, *v))
                .collect();
            table.insert_row(e, row)?;
        }
        Ok((table, ev))
    }

    /// `S(A - (e, o))` for every active `o` of every listed edge, all on one
    /// batch. Lower is better: the selected op is the one whose removal
    /// hurts the score most.
    pub fn zc_pt_table(&self, a: &ArchState, edges: &[usize], proxy: ProxyId, seed: u64) -> Result<(ScoreTable, Evaluation)> {
        self.table(a, edges, proxy, seed, true)
    }

    /// `S(A + (e, o))` for every active `o` of every listed edge. Higher is
    /// better.
    pub fn disc_zc_table(&self, a: &ArchState, edges: &[usize], proxy: ProxyId, seed: u64) -> Result<(ScoreTable, Evaluation)> {
        self.table(a, edges, proxy, seed, false)
    }
}

/// Perturbation scores of edge `e` (lower is better).
pub fn zc_pt_scores(ev: &ProxyEvaluator, a: &ArchState, e: usize, proxy: ProxyId, seed: u64) -> Result<ScoreTable> {
    Ok(ev.zc_pt_table(a, &[e], proxy, seed)?.0)
}

/// Discretization scores of edge `e` (higher is better).
pub fn disc_zc_scores(ev: &ProxyEvaluator, a: &ArchState, e: usize, proxy: ProxyId, seed: u64) -> Result<ScoreTable> {
    Ok(ev.disc_zc_table(a, &[e], proxy, seed)?.0)
}
