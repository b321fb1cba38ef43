//! Cell-based supernets: candidate operations, edge states, discretization
//! `A + (e, o)` and perturbation `A - (e, o)`.
//!
//! Three spaces are provided:
//! - the NAS-Bench-201 cell (4 nodes, 6 edges, 5 operations),
//! - a DARTS-like cell whose intermediate nodes take every earlier node as
//!   input and later keep only two of them,
//! - a chain of `N` mixed layers.

mod genotype;
mod instantiate;
mod prune;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use genotype::Genotype;
pub use instantiate::NetConfig;
pub use prune::{topology_prune, PruneStep};

/// A candidate operation. Declaration order is the tie-break order
/// everywhere a choice between operations has to be made.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpId {
    None,
    Skip,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

pub const ALL_OPS: [OpId; 5] = [OpId::None, OpId::Skip, OpId::Conv1x1, OpId::Conv3x3, OpId::AvgPool3x3];

impl OpId {
    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn nb201_name(self) -> &'static str {
        match self {
            OpId::None => "none",
            OpId::Skip => "skip_connect",
            OpId::Conv1x1 => "nor_conv_1x1",
            OpId::Conv3x3 => "nor_conv_3x3",
            OpId::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn chain_name(self) -> &'static str {
        match self {
            OpId::None => "none",
            OpId::Skip => "skip",
            OpId::Conv1x1 => "conv_1x1",
            OpId::Conv3x3 => "conv_3x3",
            OpId::AvgPool3x3 => "avg_pooling",
        }
    }
}

/// A set of operations, iterated in declaration order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct OpSet(u8);

impl OpSet {
    pub fn from_ops(ops: &[OpId]) -> Self {
        OpSet(ops.iter().fold(0, |m, o| m | o.bit()))
    }

    pub fn contains(self, op: OpId) -> bool {
        self.0 & op.bit() != 0
    }

    pub fn without(self, op: OpId) -> Self {
        OpSet(self.0 & !op.bit())
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = OpId> {
        ALL_OPS.into_iter().filter(move |o| self.contains(*o))
    }

    pub fn to_vec(self) -> Vec<OpId> {
        self.iter().collect()
    }
}

impl fmt::Debug for OpSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceKind {
    Nb201,
    /// `nodes` intermediate nodes fed by two cell inputs.
    DartsLike { nodes: usize },
    Chain { layers: usize },
}

impl fmt::Display for Space {
    /// The descriptor accepted by `parse`: `nb201`, `chain:<layers>:<ops>`
    /// or `darts:<nodes>:<ops>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops: Vec<&str> = self.ops.iter().map(|o| self.op_name(o)).collect();
        match self.kind {
            SpaceKind::Nb201 => f.write_str("nb201"),
            SpaceKind::Chain { layers } => write!(f, "chain:{layers}:{}", ops.join(",")),
            SpaceKind::DartsLike { nodes } => write!(f, "darts:{nodes}:{}", ops.join(",")),
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    /// `nb201`, `toy` (the bundled benchmark space), `chain:<layers>[:<ops>]`
    /// or `darts:<nodes>[:<ops>]`. Op lists are comma separated in the
    /// space's own naming; chains default to the four toy ops, DARTS-like
    /// cells to every op.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown space {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let count = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let ops = |names: &str, chain: bool| -> Result<Vec<OpId>> {
            names
                .split(',')
                .map(|n| {
                    ALL_OPS
                        .into_iter()
                        .find(|o| if chain { o.chain_name() == n } else { o.nb201_name() == n })
                        .ok_or_else(|| Error::UnknownOp(n.to_string()))
                })
                .collect()
        };
        match parts.as_slice() {
            ["nb201"] => Ok(Space::nb201()),
            ["toy"] => Ok(crate::tabular::toy_space()),
            ["chain", l] => Space::toy_chain(count(l)?),
            ["chain", l, o] => Space::chain(count(l)?, &ops(o, true)?),
            ["darts", n] => Space::darts_like(count(n)?, &ALL_OPS),
            ["darts", n, o] => Space::darts_like(count(n)?, &ops(o, false)?),
            _ => Err(bad()),
        }
    }
}

/// A directed edge between cell nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

/// A search space: cell topology plus candidate operation set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Space {
    kind: SpaceKind,
    ops: OpSet,
    edges: Vec<Edge>,
}

impl Space {
    /// NAS-Bench-201 cell: edges ordered `0->1, 0->2, 1->2, 0->3, 1->3, 2->3`.
    pub fn nb201() -> Self {
        let mut edges = vec![];
        for to in 1..4 {
            for from in 0..to {
                edges.push(Edge { from, to });
            }
        }
        Space {
            kind: SpaceKind::Nb201,
            ops: OpSet::from_ops(&ALL_OPS),
            edges,
        }
    }

    /// Chain of `layers` mixed layers over `ops`.
    pub fn chain(layers: usize, ops: &[OpId]) -> Result<Self> {
        if layers == 0 || ops.is_empty() {
            return Err(Error::Config("chain needs at least one layer and one op".into()));
        }
        Ok(Space {
            kind: SpaceKind::Chain { layers },
            ops: OpSet::from_ops(ops),
            edges: (0..layers).map(|i| Edge { from: i, to: i + 1 }).collect(),
        })
    }

    /// Chain over `{skip, conv_1x1, conv_3x3, avg_pooling}`.
    pub fn toy_chain(layers: usize) -> Result<Self> {
        Self::chain(layers, &[OpId::Skip, OpId::Conv1x1, OpId::Conv3x3, OpId::AvgPool3x3])
    }

    /// DARTS-like cell with `nodes` intermediate nodes. Nodes 0 and 1 are the
    /// cell inputs; intermediate node `t` receives an edge from every `j < t`.
    pub fn darts_like(nodes: usize, ops: &[OpId]) -> Result<Self> {
        if nodes == 0 || ops.is_empty() {
            return Err(Error::Config("DARTS-like cell needs nodes and ops".into()));
        }
        let mut edges = vec![];
        for to in 2..nodes + 2 {
            for from in 0..to {
                edges.push(Edge { from, to });
            }
        }
        Ok(Space {
            kind: SpaceKind::DartsLike { nodes },
            ops: OpSet::from_ops(ops),
            edges,
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn ops(&self) -> Vec<OpId> {
        self.ops.to_vec()
    }

    pub fn op_set(&self) -> OpSet {
        self.ops
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Whether intermediate nodes select a subset of their input edges.
    pub fn has_topology(&self) -> bool {
        matches!(self.kind, SpaceKind::DartsLike { .. })
    }

    /// Nodes that aggregate edges, in order.
    pub fn target_nodes(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.edges.iter().map(|e| e.to).collect();
        t.dedup();
        t
    }

    pub fn incoming(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].to == node).collect()
    }

    pub fn op_name(&self, op: OpId) -> &'static str {
        match self.kind {
            SpaceKind::Chain { .. } => op.chain_name(),
            _ => op.nb201_name(),
        }
    }

    pub fn parse_op(&self, token: &str) -> Result<OpId> {
        self.ops
            .iter()
            .find(|&o| self.op_name(o) == token)
            .ok_or_else(|| Error::UnknownOp(token.to_string()))
    }

    /// `|O|^|E|` operation assignments, or `None` on overflow.
    pub fn size(&self) -> Option<u128> {
        (self.ops.len() as u128).checked_pow(self.edges.len() as u32)
    }

    /// The untrained supernet: every edge mixed over every candidate.
    pub fn supernet(&self) -> ArchState {
        ArchState {
            space: Arc::new(self.clone()),
            edges: vec![EdgeState::Mixed(self.ops); self.edges.len()],
        }
    }

    /// Every fully discretized genotype exactly once. The last edge varies
    /// fastest; operations follow declaration order.
    pub fn enumerate(&self) -> impl Iterator<Item = Genotype> + '_ {
        let ops = self.ops();
        let e = self.edges.len();
        let mut digits = vec![0usize; e];
        let mut done = ops.is_empty();
        let base = self.supernet();
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let mut a = base.clone();
            for (i, &d) in digits.iter().enumerate() {
                a.edges[i] = EdgeState::Fixed(ops[d]);
            }
            // advance the mixed-radix counter
            let mut k = e;
            loop {
                if k == 0 {
                    done = true;
                    break;
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < ops.len() {
                    break;
                }
                digits[k] = 0;
            }
            Some(a.genotype().expect("fully discretized"))
        })
    }
}

/// State of one edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeState {
    /// Still a mixture over the active candidates.
    Mixed(OpSet),
    /// Discretized to one operation.
    Fixed(OpId),
    /// Dropped by topology pruning.
    Removed,
}

/// A supernet or partially/fully discretized architecture. Value semantics:
/// every transition returns a new state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchState {
    space: Arc<Space>,
    edges: Vec<EdgeState>,
}

impl ArchState {
    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn edge_states(&self) -> &[EdgeState] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Result<EdgeState> {
        self.edges.get(e).copied().ok_or(Error::EdgeOutOfRange(e))
    }

    /// Number of discretization steps taken so far.
    pub fn t(&self) -> usize {
        self.edges
            .iter()
            .filter(|s| !matches!(s, EdgeState::Mixed(_)))
            .count()
    }

    pub fn mixed_edges(&self) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| matches!(self.edges[i], EdgeState::Mixed(_)))
            .collect()
    }

    pub fn is_fully_discretized(&self) -> bool {
        self.mixed_edges().is_empty()
    }

    /// Operations currently present on edge `e`.
    pub fn active_ops(&self, e: usize) -> Result<Vec<OpId>> {
        Ok(match self.edge(e)? {
            EdgeState::Mixed(s) => s.to_vec(),
            EdgeState::Fixed(o) => vec![o],
            EdgeState::Removed => vec![],
        })
    }

    fn mixed_set(&self, e: usize) -> Result<OpSet> {
        match self.edge(e)? {
            EdgeState::Mixed(s) => Ok(s),
            EdgeState::Fixed(_) => Err(Error::EdgeFixed(e)),
            EdgeState::Removed => Err(Error::EdgeNotMixed(e)),
        }
    }

    /// `A + (e, o)`: fix edge `e` to `o`.
    pub fn discretize(&self, e: usize, o: OpId) -> Result<ArchState> {
        let set = self.mixed_set(e)?;
        if !set.contains(o) {
            return Err(Error::OpNotActive {
                edge: e,
                op: self.space.op_name(o).into(),
            });
        }
        let mut next = self.clone();
        next.edges[e] = EdgeState::Fixed(o);
        Ok(next)
    }

    /// `A - (e, o)`: remove `o` from edge `e`'s candidates.
    pub fn perturb(&self, e: usize, o: OpId) -> Result<ArchState> {
        let set = self.mixed_set(e)?;
        if !set.contains(o) {
            return Err(Error::OpNotActive {
                edge: e,
                op: self.space.op_name(o).into(),
            });
        }
        if set.len() < 2 {
            return Err(Error::LastOp(e));
        }
        let mut next = self.clone();
        next.edges[e] = EdgeState::Mixed(set.without(o));
        Ok(next)
    }

    /// Drop edge `e` from the cell (topology selection).
    pub fn remove_edge(&self, e: usize) -> Result<ArchState> {
        if !self.space.has_topology() {
            return Err(Error::NoTopology);
        }
        if self.edge(e)? == EdgeState::Removed {
            return Err(Error::EdgeNotMixed(e));
        }
        let to = self.space.edges[e].to;
        let remaining = self
            .space
            .incoming(to)
            .into_iter()
            .filter(|&i| i != e && self.edges[i] != EdgeState::Removed)
            .count();
        if remaining == 0 {
            return Err(Error::Config(format!("removing edge {e} would disconnect node {to}")));
        }
        let mut next = self.clone();
        next.edges[e] = EdgeState::Removed;
        Ok(next)
    }

    /// Live input edges of `node`.
    pub fn live_inputs(&self, node: usize) -> Vec<usize> {
        self.space
            .incoming(node)
            .into_iter()
            .filter(|&i| self.edges[i] != EdgeState::Removed)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptors_round_trip() {
        for d in ["nb201", "chain:3:skip,conv_3x3", "darts:2:skip_connect,nor_conv_1x1"] {
            let s: Space = d.parse().unwrap();
            assert_eq!(s.to_string(), d);
        }
        assert_eq!("toy".parse::<Space>().unwrap().size(), Some(81));
        assert_eq!("chain:5".parse::<Space>().unwrap(), Space::toy_chain(5).unwrap());
        assert_eq!("darts:3".parse::<Space>().unwrap().num_ops(), 5);
        for bad in ["", "nb202", "chain", "chain:x", "chain:0", "chain:2:conv_9x9", "darts:2:skip"] {
            assert!(bad.parse::<Space>().is_err(), "{bad}");
        }
    }

    #[test]
    fn nb201_shape() {
        let s = Space::nb201();
        assert_eq!(s.num_edges(), 6);
        assert_eq!(s.num_ops(), 5);
        assert_eq!(s.size(), Some(15625));
        assert_eq!(s.incoming(3), vec![3, 4, 5]);
    }

    #[test]
    fn full_discretization_counts_steps() {
        let mut a = Space::nb201().supernet();
        assert_eq!(a.t(), 0);
        a = a.discretize(0, OpId::Conv3x3).unwrap();
        assert_eq!(a.mixed_edges().len(), 5);
        assert_eq!(a.active_ops(0).unwrap(), vec![OpId::Conv3x3]);
        for e in 1..6 {
            a = a.discretize(e, OpId::Skip).unwrap();
        }
        assert_eq!(a.t(), 6);
        assert!(a.is_fully_discretized());
        assert_eq!(
            a.genotype().unwrap().as_str(),
            "|nor_conv_3x3~0|+|skip_connect~0|skip_connect~1|+|skip_connect~0|skip_connect~1|skip_connect~2|"
        );
    }

    #[test]
    fn discretize_errors() {
        let a = Space::nb201().supernet().discretize(0, OpId::None).unwrap();
        assert_eq!(a.discretize(0, OpId::Skip), Err(Error::EdgeFixed(0)));
        let p = a.perturb(1, OpId::Skip).unwrap();
        assert!(matches!(p.discretize(1, OpId::Skip), Err(Error::OpNotActive { .. })));
        assert_eq!(a.discretize(9, OpId::Skip), Err(Error::EdgeOutOfRange(9)));
    }

    #[test]
    fn perturb_removes_one_candidate() {
        let s = Space::chain(1, &[OpId::Skip, OpId::Conv1x1, OpId::Conv3x3]).unwrap();
        let a = s.supernet();
        let p = a.perturb(0, OpId::Skip).unwrap();
        assert_eq!(p.active_ops(0).unwrap(), vec![OpId::Conv1x1, OpId::Conv3x3]);
        assert!(matches!(p.edge(0).unwrap(), EdgeState::Mixed(_)));
        // input untouched
        assert_eq!(a.active_ops(0).unwrap().len(), 3);
        assert!(p.discretize(0, OpId::Conv3x3).is_ok());
        let last = p.perturb(0, OpId::Conv1x1).unwrap();
        assert_eq!(last.perturb(0, OpId::Conv3x3), Err(Error::LastOp(0)));
    }

    #[test]
    fn one_perturbation_per_op_gives_distinct_states() {
        let a = Space::nb201().supernet();
        let states: std::collections::HashSet<ArchState> =
            ALL_OPS.iter().map(|&o| a.perturb(2, o).unwrap()).collect();
        assert_eq!(states.len(), 5);
    }

    #[test]
    fn enumeration_counts() {
        let s = Space::chain(4, &[OpId::Skip, OpId::Conv1x1, OpId::Conv3x3]).unwrap();
        let all: Vec<Genotype> = s.enumerate().collect();
        assert_eq!(all.len(), 81);
        let uniq: std::collections::HashSet<&Genotype> = all.iter().collect();
        assert_eq!(uniq.len(), 81);
        assert_eq!(Space::chain(1, &[OpId::Skip]).unwrap().enumerate().count(), 1);
    }

    #[test]
    fn darts_like_edges() {
        let s = Space::darts_like(4, &[OpId::Skip, OpId::Conv3x3]).unwrap();
        assert_eq!(s.num_edges(), 2 + 3 + 4 + 5);
        assert_eq!(s.incoming(4).len(), 4);
        assert!(s.has_topology());
        assert_eq!(Space::nb201().supernet().remove_edge(0), Err(Error::NoTopology));
    }
}
