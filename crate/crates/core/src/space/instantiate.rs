use serde::{Deserialize, Serialize};

use super::{ArchState, EdgeState, OpId, SpaceKind};
use crate::autodiff::{Graph, GraphBuilder, NodeId, TapKind};
use crate::error::{Error, Result};

/// Macro skeleton around the searched cells.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    /// Channels of the first stage.
    pub width: usize,
    pub cells_per_stage: usize,
    /// Per-sample input shape `C, H, W`.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width: 16,
            cells_per_stage: 1,
            input_shape: vec![3, 16, 16],
            num_classes: 4,
            init_seed: 0,
        }
    }
}

impl NetConfig {
    fn validate(&self, kind: SpaceKind) -> Result<()> {
        if self.width == 0 || self.cells_per_stage == 0 || self.num_classes == 0 {
            return Err(Error::Config("width, cells per stage and classes must be positive".into()));
        }
        if self.input_shape.len() != 3 || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} is not C,H,W", self.input_shape)));
        }
        if kind == SpaceKind::Nb201 && self.input_shape[1].min(self.input_shape[2]) < 4 {
            return Err(Error::Config("two stride-2 reductions need at least 4x4 inputs".into()));
        }
        Ok(())
    }
}

/// ReLU -> conv -> BN, with the block output tapped.
fn relu_conv_bn(
    b: &mut GraphBuilder,
    name: &str,
    x: NodeId,
    out: usize,
    kernel: usize,
    stride: usize,
) -> Result<NodeId> {
    let r = b.relu(x)?;
    let c = b.conv2d(&format!("{name}/conv"), r, out, kernel, stride, kernel / 2)?;
    let n = b.batchnorm(&format!("{name}/bn"), c)?;
    b.tap(name, n, TapKind::Block)?;
    Ok(n)
}

fn candidate(b: &mut GraphBuilder, name: &str, op: OpId, x: NodeId) -> Result<NodeId> {
    let c = b.shape(x)[0];
    match op {
        OpId::None => b.scale(x, 0.0),
        OpId::Skip => Ok(x),
        OpId::Conv1x1 => relu_conv_bn(b, name, x, c, 1, 1),
        OpId::Conv3x3 => relu_conv_bn(b, name, x, c, 3, 1),
        OpId::AvgPool3x3 => b.avg_pool3x3(x),
    }
}

/// One edge: the single op if fixed, the mean of the active ops if mixed.
fn edge(b: &mut GraphBuilder, a: &ArchState, prefix: &str, e: usize, x: NodeId) -> Result<Option<NodeId>> {
    let ops = match a.edges[e] {
        EdgeState::Removed => return Ok(None),
        EdgeState::Fixed(o) => vec![o],
        EdgeState::Mixed(s) => s.to_vec(),
    };
    let mut outs = Vec::with_capacity(ops.len());
    for o in &ops {
        let name = format!("{prefix}/e{e}/{}", a.space().op_name(*o));
        outs.push(candidate(b, &name, *o, x)?);
    }
    if outs.len() == 1 {
        return Ok(Some(outs[0]));
    }
    let sum = b.add(&outs)?;
    Ok(Some(b.scale(sum, 1.0 / outs.len() as f64)?))
}

fn sum_inputs(b: &mut GraphBuilder, xs: &[NodeId]) -> Result<NodeId> {
    match xs {
        [x] => Ok(*x),
        _ => b.add(xs),
    }
}

/// A cell whose node 0 is `inputs[0]` (and node 1 is `inputs[1]` for
/// two-input cells); returns every node value.
fn cell(b: &mut GraphBuilder, a: &ArchState, prefix: &str, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
    let space = a.space();
    let mut nodes: Vec<NodeId> = inputs.to_vec();
    for t in space.target_nodes() {
        let mut parts = vec![];
        for e in space.incoming(t) {
            let from = nodes[space.edges()[e].from];
            if let Some(y) = edge(b, a, prefix, e, from)? {
                parts.push(y);
            }
        }
        if parts.is_empty() {
            return Err(Error::Graph(format!("node {t} has no live inputs")));
        }
        let v = sum_inputs(b, &parts)?;
        debug_assert_eq!(nodes.len(), t);
        nodes.push(v);
    }
    Ok(nodes)
}

fn stem(b: &mut GraphBuilder, width: usize) -> Result<NodeId> {
    let x = b.input();
    let c = b.conv2d("stem/conv", x, width, 3, 1, 1)?;
    let n = b.batchnorm("stem/bn", c)?;
    b.tap("stem", n, TapKind::Named)?;
    Ok(n)
}

fn head(b: &mut GraphBuilder, x: NodeId, classes: usize) -> Result<NodeId> {
    b.tap("cells_out", x, TapKind::Named)?;
    let n = b.batchnorm("lastact/bn", x)?;
    let r = b.relu(n)?;
    b.tap("features", r, TapKind::Named)?;
    let p = b.global_avg_pool(r)?;
    b.linear("classifier", p, classes, true)
}

/// Residual stride-2 block doubling the channels.
fn reduction(b: &mut GraphBuilder, name: &str, x: NodeId, out: usize) -> Result<NodeId> {
    let a = relu_conv_bn(b, &format!("{name}/a"), x, out, 3, 2)?;
    let a = relu_conv_bn(b, &format!("{name}/b"), a, out, 3, 1)?;
    let s = b.conv2d(&format!("{name}/shortcut"), x, out, 1, 2, 0)?;
    b.add(&[a, s])
}

impl ArchState {
    /// Materialize this state as a differentiable network. Parameter names
    /// are structural, so two states sharing an op on an edge also share its
    /// initial weights.
    pub fn instantiate(&self, cfg: &NetConfig) -> Result<Graph> {
        let kind = self.space().kind();
        cfg.validate(kind)?;
        let mut b = GraphBuilder::new(&cfg.input_shape, cfg.init_seed);
        let mut x = stem(&mut b, cfg.width)?;
        match kind {
            SpaceKind::Nb201 => {
                let mut c = cfg.width;
                let mut k = 0;
                for stage in 0..3 {
                    if stage > 0 {
                        c *= 2;
                        x = reduction(&mut b, &format!("reduce{stage}"), x, c)?;
                    }
                    for _ in 0..cfg.cells_per_stage {
                        x = *cell(&mut b, self, &format!("cell{k}"), &[x])?.last().expect("cell nodes");
                        k += 1;
                    }
                }
            }
            SpaceKind::Chain { .. } => {
                for k in 0..cfg.cells_per_stage {
                    x = *cell(&mut b, self, &format!("cell{k}"), &[x])?.last().expect("cell nodes");
                }
            }
            SpaceKind::DartsLike { nodes } => {
                let mut s0 = x;
                let mut s1 = relu_conv_bn(&mut b, "pre", x, cfg.width, 1, 1)?;
                for k in 0..cfg.cells_per_stage {
                    let vals = cell(&mut b, self, &format!("cell{k}"), &[s0, s1])?;
                    let cat = b.concat(&vals[2..2 + nodes])?;
                    let out = relu_conv_bn(&mut b, &format!("cell{k}/out"), cat, cfg.width, 1, 1)?;
                    s0 = s1;
                    s1 = out;
                }
                x = s1;
            }
        }
        let out = head(&mut b, x, cfg.num_classes)?;
        b.finish(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::NormMode;
    use crate::space::Space;
    use crate::tensor::Tensor;

    fn input(seed: u64) -> Tensor {
        use rand::Rng;
        let mut r = crate::rng::rng(seed);
        Tensor::new(vec![4, 3, 8, 8], (0..4 * 192).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small() -> NetConfig {
        NetConfig {
            width: 4,
            input_shape: vec![3, 8, 8],
            ..NetConfig::default()
        }
    }

    #[test]
    fn skip_chain_passes_stem_through() {
        let s = Space::chain(1, &[OpId::Skip]).unwrap();
        let mut g = s.supernet().instantiate(&small()).unwrap();
        g.forward(&input(1), NormMode::BatchStats).unwrap();
        assert_eq!(g.tap_value("cells_out"), g.tap_value("stem"));
    }

    #[test]
    fn skip_none_mixture_halves() {
        let s = Space::chain(1, &[OpId::None, OpId::Skip]).unwrap();
        let mut g = s.supernet().instantiate(&small()).unwrap();
        g.forward(&input(2), NormMode::BatchStats).unwrap();
        let stem = g.tap_value("stem").unwrap().map(|v| v / 2.0);
        assert_eq!(g.tap_value("cells_out").unwrap(), &stem);
    }

    #[test]
    fn init_is_deterministic_and_shared_across_perturbations() {
        let a = Space::nb201().supernet();
        let g1 = a.instantiate(&small()).unwrap();
        let g2 = a.instantiate(&small()).unwrap();
        assert_eq!(g1.param_vector(), g2.param_vector());
        let p = a.perturb(0, OpId::Conv1x1).unwrap().instantiate(&small()).unwrap();
        let find = |g: &Graph, n: &str| g.params().iter().find(|p| p.name == n).map(|p| p.value.clone());
        let n = "cell0/e0/nor_conv_3x3/conv.weight";
        assert_eq!(find(&g1, n), find(&p, n));
        assert!(find(&p, "cell0/e0/nor_conv_1x1/conv.weight").is_none());
    }

    #[test]
    fn every_space_builds_and_runs() {
        let spaces = [
            Space::nb201(),
            Space::toy_chain(3).unwrap(),
            Space::darts_like(3, &[OpId::Skip, OpId::Conv3x3, OpId::AvgPool3x3]).unwrap(),
        ];
        for s in spaces {
            let mut g = s.supernet().instantiate(&small()).unwrap();
            let y = g.forward(&input(3), NormMode::BatchStats).unwrap();
            assert_eq!(y.shape(), &[4, 4]);
            assert!(y.is_finite());
        }
    }

    #[test]
    fn bad_configs_rejected() {
        let a = Space::nb201().supernet();
        let mut cfg = small();
        cfg.width = 0;
        assert!(a.instantiate(&cfg).is_err());
        let mut cfg = small();
        cfg.input_shape = vec![3, 2, 2];
        assert!(a.instantiate(&cfg).is_err());
    }
}
