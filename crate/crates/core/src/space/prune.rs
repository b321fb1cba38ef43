use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ArchState;
use crate::error::{Error, Result};
use crate::rng;

/// Scores observed while pruning one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub node: usize,
    /// `(edge, score of the cell with that edge removed)`.
    pub removal_scores: Vec<(usize, f64)>,
    pub kept: Vec<usize>,
}

/// Keep two input edges per intermediate node: for every node (visited in
/// seeded random order) each input edge is removed in turn and the cell
/// scored; the two edges whose removal gives the lowest score survive.
pub fn topology_prune<F>(a: &ArchState, mut score: F, seed: u64) -> Result<(ArchState, Vec<PruneStep>)>
where
    F: FnMut(&ArchState) -> Result<f64>,
{
    if !a.space().has_topology() {
        return Err(Error::NoTopology);
    }
    if !a.is_fully_discretized() {
        return Err(Error::NotDiscretized);
    }
    let mut order = a.space().target_nodes();
    order.shuffle(&mut rng::rng(rng::hash_str(seed, "prune")));
    let mut state = a.clone();
    let mut steps = vec![];
    for node in order {
        let live = state.live_inputs(node);
        if live.len() <= 2 {
            continue;
        }
        let mut scored = Vec::with_capacity(live.len());
        for &e in &live {
            scored.push((e, score(&state.remove_edge(e)?)?));
        }
        let mut ranked = scored.clone();
        ranked.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        let mut kept: Vec<usize> = ranked[..2].iter().map(|p| p.0).collect();
        kept.sort_unstable();
        for &(e, _) in &ranked[2..] {
            state = state.remove_edge(e)?;
        }
        steps.push(PruneStep {
            node,
            removal_scores: scored,
            kept,
        });
    }
    Ok((state, steps))
}
