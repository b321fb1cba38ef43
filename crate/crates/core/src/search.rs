//! Zero-Cost-PT: perturbation-driven discretization of a supernet scored by
//! a zero-cost proxy, repeated for `N` proposals, followed by a validation
//! stage over `V` minibatches.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxies::{ProxyId, DEFAULT_BATCH_SIZE};
use crate::rng;
use crate::scoring::{ProxyEvaluator, ScoreTable};
use crate::space::{topology_prune, ArchState, EdgeState, Genotype, NetConfig, OpId, PruneStep, Space};

/// How the next edge to discretize is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeOrder {
    /// Lowest-index mixed edge first.
    Fixed,
    /// A seeded shuffle drawn once per proposal.
    Random,
    /// Re-score every mixed edge each step; take the edge holding the best
    /// single score.
    GlobalOpIter,
    /// Order edges once by their best single score.
    GlobalOpOnce,
    /// Re-score every mixed edge each step; take the edge with the best mean
    /// score.
    GlobalEdgeIter,
    /// Order edges once by their mean score.
    GlobalEdgeOnce,
}

impl EdgeOrder {
    pub const ALL: [EdgeOrder; 6] = [
        EdgeOrder::Fixed,
        EdgeOrder::Random,
        EdgeOrder::GlobalOpIter,
        EdgeOrder::GlobalOpOnce,
        EdgeOrder::GlobalEdgeIter,
        EdgeOrder::GlobalEdgeOnce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeOrder::Fixed => "fixed",
            EdgeOrder::Random => "random",
            EdgeOrder::GlobalOpIter => "global-op-iter",
            EdgeOrder::GlobalOpOnce => "global-op-once",
            EdgeOrder::GlobalEdgeIter => "global-edge-iter",
            EdgeOrder::GlobalEdgeOnce => "global-edge-once",
        }
    }
}

impl fmt::Display for EdgeOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EdgeOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeOrder::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown edge order {s:?}")))
    }
}

/// Perturbations evaluated by one proposal on a fresh supernet with
/// `num_ops` candidates on each of `num_edges` edges.
pub fn perturbation_count(order: EdgeOrder, num_ops: usize, num_edges: usize) -> Result<u64> {
    if num_ops == 0 || num_edges == 0 {
        return Err(Error::Config("perturbation count needs at least one op and one edge".into()));
    }
    let (o, e) = (num_ops as u64, num_edges as u64);
    Ok(match order {
        EdgeOrder::Fixed | EdgeOrder::Random => o * e,
        EdgeOrder::GlobalOpIter | EdgeOrder::GlobalEdgeIter => o * e * (e + 1) / 2,
        EdgeOrder::GlobalOpOnce | EdgeOrder::GlobalEdgeOnce => 2 * o * e - o,
    })
}

/// Yields the edge to discretize next and a table holding that edge's
/// scores in the current state. Every scored `(edge, op)` entry counts as
/// one evaluation.
#[derive(Clone, Debug)]
pub struct EdgeSequencer {
    order: EdgeOrder,
    seed: u64,
    queue: Option<VecDeque<usize>>,
    /// Sweep scores to reuse for the first selection of a once-variant.
    pending: Option<ScoreTable>,
    evaluations: u64,
    step: usize,
}

impl EdgeSequencer {
    /// `seed` drives the random order.
    pub fn new(order: EdgeOrder, seed: u64) -> Self {
        EdgeSequencer {
            order,
            seed,
            queue: None,
            pending: None,
            evaluations: 0,
            step: 0,
        }
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    fn score<F>(&mut self, a: &ArchState, edges: &[usize], score: &mut F) -> Result<ScoreTable>
    where
        F: FnMut(&ArchState, &[usize], usize) -> Result<ScoreTable>,
    {
        let t = score(a, edges, self.step)?;
        for &e in edges {
            let row = t.row(e).ok_or_else(|| Error::Config(format!("scorer left edge {e} unscored")))?;
            self.evaluations += row.len() as u64;
        }
        Ok(t)
    }

    /// The next edge and its scores. `score(a, edges, step)` must return a
    /// row for each requested edge.
    pub fn next<F>(&mut self, a: &ArchState, score: &mut F) -> Result<(usize, ScoreTable)>
    where
        F: FnMut(&ArchState, &[usize], usize) -> Result<ScoreTable>,
    {
        let mixed = a.mixed_edges();
        if mixed.is_empty() {
            return Err(Error::NoCandidates);
        }
        let out = match self.order {
            EdgeOrder::Fixed => {
                let e = mixed[0];
                (e, self.score(a, &[e], score)?)
            }
            EdgeOrder::Random => {
                if self.queue.is_none() {
                    let mut q = mixed.clone();
                    q.shuffle(&mut rng::rng(rng::hash_str(self.seed, "edge-order")));
                    self.queue = Some(q.into());
                }
                let e = self.pop_mixed(a)?;
                (e, self.score(a, &[e], score)?)
            }
            EdgeOrder::GlobalOpIter | EdgeOrder::GlobalEdgeIter => {
                let t = self.score(a, &mixed, score)?;
                let e = if self.order == EdgeOrder::GlobalOpIter {
                    t.global_best().map(|b| b.0)
                } else {
                    t.best_mean_edge()
                };
                (e.ok_or(Error::NoCandidates)?, t)
            }
            EdgeOrder::GlobalOpOnce | EdgeOrder::GlobalEdgeOnce => {
                if self.queue.is_none() {
                    let t = self.score(a, &mixed, score)?;
                    let key = |e: usize| -> f64 {
                        let row = t.oriented(e).expect("swept edge");
                        if self.order == EdgeOrder::GlobalOpOnce {
                            row.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
                        } else {
                            row.iter().map(|p| p.1).sum::<f64>() / row.len() as f64
                        }
                    };
                    let mut q = mixed.clone();
                    // stable: lower index first on ties
                    q.sort_by(|&x, &y| key(y).total_cmp(&key(x)));
                    self.queue = Some(q.into());
                    self.pending = Some(t);
                }
                let e = self.pop_mixed(a)?;
                match self.pending.take() {
                    Some(t) => (e, t),
                    None => (e, self.score(a, &[e], score)?),
                }
            }
        };
        self.step += 1;
        Ok(out)
    }

    fn pop_mixed(&mut self, a: &ArchState) -> Result<usize> {
        let q = self.queue.as_mut().expect("queue initialised");
        while let Some(e) = q.pop_front() {
            if matches!(a.edge(e)?, EdgeState::Mixed(_)) {
                return Ok(e);
            }
        }
        Err(Error::NoCandidates)
    }
}

/// One discretization step of a greedy walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub edge: usize,
    /// Scores of the chosen edge at selection time, in declared op order.
    pub scores: Vec<(OpId, f64)>,
    pub chosen: OpId,
}

#[derive(Clone, Debug)]
pub struct GreedyOutcome {
    pub state: ArchState,
    pub steps: Vec<GreedyStep>,
    pub evaluations: u64,
}

/// Discretize every mixed edge of `a0` in `order`, picking the best op of
/// each edge under the scorer's direction. Edges left with a single
/// candidate are fixed without scoring.
pub fn greedy_discretize<F>(a0: &ArchState, order: EdgeOrder, seed: u64, mut score: F) -> Result<GreedyOutcome>
where
    F: FnMut(&ArchState, &[usize], usize) -> Result<ScoreTable>,
{
    let mut state = a0.clone();
    let mut steps = vec![];
    for e in a0.mixed_edges() {
        if let EdgeState::Mixed(set) = state.edge(e)? {
            if set.len() == 1 {
                let o = set.iter().next().expect("one op");
                state = state.discretize(e, o)?;
                steps.push(GreedyStep {
                    edge: e,
                    scores: vec![],
                    chosen: o,
                });
            }
        }
    }
    let mut seq = EdgeSequencer::new(order, seed);
    while !state.mixed_edges().is_empty() {
        let (e, table) = seq.next(&state, &mut score)?;
        let chosen = table.best(e)?;
        steps.push(GreedyStep {
            edge: e,
            scores: table.row(e).expect("scored edge").to_vec(),
            chosen,
        });
        state = state.discretize(e, chosen)?;
    }
    Ok(GreedyOutcome {
        state,
        steps,
        evaluations: seq.evaluations(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of proposals `N`.
    pub proposals: usize,
    /// Number of validation minibatches `V`.
    pub validations: usize,
    pub order: EdgeOrder,
    pub proxy: ProxyId,
    pub seed: u64,
    pub batch_size: usize,
    /// Draw fresh supernet weights for every proposal instead of sharing one
    /// initialisation across the search.
    #[serde(default)]
    pub reinit_per_proposal: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            proposals: 10,
            validations: 100,
            order: EdgeOrder::Random,
            proxy: ProxyId::Nwot,
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            reinit_per_proposal: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proposals == 0 {
            return Err(Error::Config("at least one proposal is required".into()));
        }
        if self.validations == 0 && self.proposals > 1 {
            return Err(Error::Config("validation over zero minibatches needs exactly one proposal".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Seed of proposal `i`.
    pub fn iteration_seed(&self, i: usize) -> u64 {
        rng::hash64(self.seed, i as u64)
    }

    /// Supernet init seed of proposal `i`.
    pub fn init_seed(&self, i: usize) -> u64 {
        if self.reinit_per_proposal {
            rng::hash_str(self.iteration_seed(i), "init")
        } else {
            rng::hash_str(self.seed, "init")
        }
    }

    /// Batch seed of validation minibatch `j`.
    pub fn validation_seed(&self, j: usize) -> u64 {
        rng::hash64(rng::hash_str(self.seed, "validation"), j as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub edge: usize,
    /// Perturbation score of each active op (op name -> `S(A - (e, o))`).
    pub scores: BTreeMap<String, f64>,
    pub chosen: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalTrace {
    pub iteration: usize,
    pub seed: u64,
    pub steps: Vec<StepTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prune: Vec<PruneStep>,
    pub perturbations: u64,
    /// `None` when the proposal was aborted.
    pub genotype: Option<Genotype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub genotype: Genotype,
    pub score_sum: f64,
}

/// Everything needed to replay a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub config: SearchConfig,
    pub net: NetConfig,
    pub proposals: Vec<ProposalTrace>,
    pub validation: Vec<ValidationEntry>,
    pub winner: Genotype,
    /// Perturbation evaluations over all proposals.
    pub perturbations: u64,
}

impl SearchTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

fn step_trace(a: &ArchState, s: &GreedyStep) -> StepTrace {
    let space = a.space();
    StepTrace {
        edge: s.edge,
        scores: s.scores.iter().map(|&(o, v)| (space.op_name(o).to_string(), v)).collect(),
        chosen: space.op_name(s.chosen).to_string(),
    }
}

/// One proposal: discretize `a0` edge by edge, each time fixing the op
/// whose removal lowers the supernet's proxy score the most, then prune
/// the topology if the space has one. A degenerate score that survives the
/// retries aborts the proposal; that is recorded, not returned as an error.
pub fn propose(a0: &ArchState, cfg: &SearchConfig, ev: &ProxyEvaluator, iteration: usize) -> Result<ProposalTrace> {
    let seed = cfg.iteration_seed(iteration);
    let mut ev = ev.clone();
    ev.net.init_seed = cfg.init_seed(iteration);
    ev.batch_size = cfg.batch_size;
    let mut trace = ProposalTrace {
        iteration,
        seed,
        steps: vec![],
        prune: vec![],
        perturbations: 0,
        genotype: None,
        aborted: None,
    };
    let mut evaluations = 0;
    let run = |trace: &mut ProposalTrace, evaluations: &mut u64| -> Result<Genotype> {
        let scorer = |a: &ArchState, edges: &[usize], step: usize| -> Result<ScoreTable> {
            let (t, _) = ev.zc_pt_table(a, edges, cfg.proxy, rng::hash64(seed, step as u64))?;
            *evaluations += edges.iter().map(|&e| t.row(e).map_or(0, |r| r.len() as u64)).sum::<u64>();
            Ok(t)
        };
        let out = greedy_discretize(a0, cfg.order, seed, scorer)?;
        trace.steps = out.steps.iter().map(|s| step_trace(a0, s)).collect();
        let mut state = out.state;
        if state.space().has_topology() {
            let prune_seed = rng::hash_str(seed, "prune");
            let mut k = 0u64;
            let (pruned, steps) = topology_prune(
                &state,
                |s| {
                    k += 1;
                    let e = ev.score_states(std::slice::from_ref(s), cfg.proxy, rng::hash64(prune_seed, k))?;
                    Ok(e.values[0])
                },
                prune_seed,
            )?;
            state = pruned;
            trace.prune = steps;
        }
        state.genotype()
    };
    match run(&mut trace, &mut evaluations) {
        Ok(g) => trace.genotype = Some(g),
        Err(e @ Error::Degenerate(_)) => trace.aborted = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    trace.perturbations = evaluations;
    Ok(trace)
}

/// Sum of end-to-end proxy scores of every candidate over `cfg.validations`
/// shared minibatches. Identical genotypes are scored once.
pub fn validation_scores(space: &Space, candidates: &[Genotype], cfg: &SearchConfig, ev: &ProxyEvaluator) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut ev = ev.clone();
    ev.net.init_seed = cfg.init_seed(0);
    ev.batch_size = cfg.batch_size;
    let mut unique: Vec<&Genotype> = vec![];
    let mut slot = HashMap::new();
    let index: Vec<usize> = candidates
        .iter()
        .map(|g| {
            *slot.entry(g.as_str()).or_insert_with(|| {
                unique.push(g);
                unique.len() - 1
            })
        })
        .collect();
    let states = unique
        .iter()
        .map(|g| ArchState::from_genotype(space, g.as_str()))
        .collect::<Result<Vec<_>>>()?;
    let mut nets = ev.instantiate(&states)?;
    let mut sums = vec![0.0; unique.len()];
    for j in 0..cfg.validations {
        let e = ev.score_nets(&mut nets, cfg.proxy, cfg.validation_seed(j))?;
        for (s, v) in sums.iter_mut().zip(&e.values) {
            *s += v;
        }
    }
    Ok(index.iter().map(|&k| sums[k]).collect())
}

/// Index of the best candidate: highest summed validation score, earliest
/// on ties. With `V = 0` only a single candidate is accepted.
pub fn validate(space: &Space, candidates: &[Genotype], cfg: &SearchConfig, ev: &ProxyEvaluator) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    if cfg.validations == 0 {
        if candidates.len() != 1 {
            return Err(Error::Config("validation over zero minibatches needs exactly one candidate".into()));
        }
        return Ok((0, vec![0.0]));
    }
    let sums = validation_scores(space, candidates, cfg, ev)?;
    let mut best = 0;
    for (i, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = i;
        }
    }
    Ok((best, sums))
}

/// Run the full search from the supernet `a0`: `cfg.proposals` independent
/// proposals, then validation of the proposed genotypes. Fails with
/// [`Error::Aborted`] if every proposal was aborted.
pub fn zero_cost_pt(a0: &ArchState, cfg: &SearchConfig, ev: &ProxyEvaluator) -> Result<(Genotype, SearchTrace)> {
    cfg.validate()?;
    let proposals = (0..cfg.proposals)
        .into_par_iter()
        .map(|i| propose(a0, cfg, ev, i))
        .collect::<Result<Vec<_>>>()?;
    let candidates: Vec<Genotype> = proposals.iter().filter_map(|p| p.genotype.clone()).collect();
    if candidates.is_empty() {
        return Err(Error::Aborted(format!("all {} proposals hit degenerate scores", cfg.proposals)));
    }
    let mut vcfg = cfg.clone();
    if candidates.len() == 1 {
        // a lone survivor needs no validation
        vcfg.validations = 0;
    }
    let (best, sums) = validate(a0.space(), &candidates, &vcfg, ev)?;
    let winner = candidates[best].clone();
    let mut net = ev.net.clone();
    net.init_seed = cfg.init_seed(0);
    let trace = SearchTrace {
        config: cfg.clone(),
        net,
        perturbations: proposals.iter().map(|p| p.perturbations).sum(),
        validation: candidates
            .into_iter()
            .zip(sums)
            .map(|(genotype, score_sum)| ValidationEntry { genotype, score_sum })
            .collect(),
        proposals,
        winner: winner.clone(),
    };
    Ok((winner, trace))
}
