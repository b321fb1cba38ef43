use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArchState, EdgeState, Space};
use crate::error::{Error, Result};

/// Canonical string identity of a fully discretized architecture.
///
/// Grammar: one `|op~src|...|` group per target node, groups joined by `+`,
/// e.g. `|nor_conv_3x3~0|+|skip_connect~0|none~1|+|...|`. Removed edges of a
/// DARTS-like cell are omitted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genotype(String);

impl Genotype {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parse and re-encode, yielding the canonical form.
    pub fn parse(space: &Space, s: &str) -> Result<Genotype> {
        ArchState::from_genotype(space, s)?.genotype()
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Genotype {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl ArchState {
    /// Encode a fully discretized state.
    pub fn genotype(&self) -> Result<Genotype> {
        if !self.is_fully_discretized() {
            return Err(Error::NotDiscretized);
        }
        let space = self.space();
        let mut out = String::new();
        for (k, node) in space.target_nodes().into_iter().enumerate() {
            if k > 0 {
                out.push('+');
            }
            out.push('|');
            for e in space.incoming(node) {
                if let EdgeState::Fixed(o) = self.edges[e] {
                    out.push_str(space.op_name(o));
                    out.push('~');
                    out.push_str(&space.edges()[e].from.to_string());
                    out.push('|');
                }
            }
        }
        Ok(Genotype(out))
    }

    /// Parse a genotype string into a fully discretized state of `space`.
    pub fn from_genotype(space: &Space, s: &str) -> Result<ArchState> {
        let bad = |msg: &str| Error::Genotype(s.to_string(), msg.to_string());
        let nodes = space.target_nodes();
        let groups: Vec<&str> = s.trim().split('+').collect();
        if groups.len() != nodes.len() {
            return Err(bad(&format!("expected {} node groups, found {}", nodes.len(), groups.len())));
        }
        let mut a = space.supernet();
        let mut seen = vec![false; space.num_edges()];
        for (group, &node) in groups.iter().zip(&nodes) {
            let inner = group
                .strip_prefix('|')
                .and_then(|g| g.strip_suffix('|'))
                .ok_or_else(|| bad("groups must be delimited by '|'"))?;
            if inner.is_empty() {
                return Err(bad("empty node group"));
            }
            for token in inner.split('|') {
                let (op, src) = token
                    .split_once('~')
                    .ok_or_else(|| bad(&format!("token {token:?} lacks '~'")))?;
                let op = space.parse_op(op)?;
                let src: usize = src
                    .parse()
                    .map_err(|_| bad(&format!("bad source index in {token:?}")))?;
                let e = space
                    .incoming(node)
                    .into_iter()
                    .find(|&e| space.edges()[e].from == src)
                    .ok_or_else(|| bad(&format!("no edge {src}->{node}")))?;
                if seen[e] {
                    return Err(bad(&format!("edge {src}->{node} listed twice")));
                }
                seen[e] = true;
                a.edges[e] = EdgeState::Fixed(op);
            }
        }
        for (e, &ok) in seen.iter().enumerate() {
            if !ok {
                if space.has_topology() {
                    a.edges[e] = EdgeState::Removed;
                } else {
                    return Err(bad(&format!("edge {e} missing")));
                }
            }
        }
        if space.has_topology() {
            for node in nodes {
                if a.live_inputs(node).is_empty() {
                    return Err(bad(&format!("node {node} has no inputs")));
                }
            }
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::OpId;

    #[test]
    fn listing_genotype_parses() {
        let s = "|none~0|+|skip_connect~0|nor_conv_1x1~1|+|nor_conv_3x3~0|avg_pool_3x3~1|skip_connect~2|";
        let a = ArchState::from_genotype(&Space::nb201(), s).unwrap();
        assert_eq!(a.t(), 6);
        assert_eq!(a.edge_states()[0], EdgeState::Fixed(OpId::None));
        assert_eq!(a.edge_states()[4], EdgeState::Fixed(OpId::AvgPool3x3));
        assert_eq!(a.genotype().unwrap().as_str(), s);
    }

    #[test]
    fn malformed_strings_rejected() {
        let sp = Space::nb201();
        for s in [
            "|bogus~0|+|none~0|none~1|+|none~0|none~1|none~2|",
            "|none~0|+|none~0|none~1|",
            "none~0|+|none~0|none~1|+|none~0|none~1|none~2|",
            "|none~3|+|none~0|none~1|+|none~0|none~1|none~2|",
            "|none~0|+|none~0|none~0|+|none~0|none~1|none~2|",
            "|none~0|+|none~0|+|none~0|none~1|none~2|",
            "|none0|+|none~0|none~1|+|none~0|none~1|none~2|",
        ] {
            assert!(ArchState::from_genotype(&sp, s).is_err(), "{s}");
        }
    }

    #[test]
    fn chain_and_darts_grammar() {
        let chain = Space::toy_chain(3).unwrap();
        let g = "|conv_3x3~0|+|skip~1|+|avg_pooling~2|";
        assert_eq!(Genotype::parse(&chain, g).unwrap().as_str(), g);
        let darts = Space::darts_like(2, &[OpId::Skip, OpId::Conv3x3]).unwrap();
        let g = "|skip_connect~0|nor_conv_3x3~1|+|skip_connect~1|nor_conv_3x3~2|";
        let a = ArchState::from_genotype(&darts, g).unwrap();
        assert_eq!(a.edge_states()[2], EdgeState::Removed);
        assert_eq!(a.genotype().unwrap().as_str(), g);
    }

    #[test]
    fn partial_state_has_no_genotype() {
        assert_eq!(Space::nb201().supernet().genotype(), Err(Error::NotDiscretized));
    }
}
