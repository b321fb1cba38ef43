//! Static computation graphs with parameters, taps and reverse-mode gradients.

use rand::Rng as _;

use super::kernels::{self, BnCache};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub type NodeId = usize;
pub type ParamId = usize;

/// How normalization layers behave during a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// Normalize with the current batch's statistics (all passes on untrained
    /// or training networks).
    BatchStats,
    /// Treat every normalization layer as the identity. Used by synflow.
    Bypass,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Conv2d {
        weight: ParamId,
        stride: usize,
        pad: usize,
    },
    Linear {
        weight: ParamId,
        bias: Option<ParamId>,
    },
    Relu,
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
    },
    AvgPool3x3,
    GlobalAvgPool,
    Add,
    Scale(f64),
    Concat,
    SoftmaxCrossEntropy,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Relu => "relu",
            Op::BatchNorm { .. } => "batchnorm",
            Op::AvgPool3x3 => "avgpool3x3",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Add => "add",
            Op::Scale(_) => "scale",
            Op::Concat => "concat",
            Op::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Per-sample shape (no batch dimension).
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub owner: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TapKind {
    /// Output of a rectifier; every ReLU is tapped automatically.
    Relu,
    /// Output of a conv+norm block, before any residual sum.
    Block,
    /// Any other designated point (stem output, pre-pooling features, ...).
    Named,
}

#[derive(Clone, Debug)]
pub struct Tap {
    pub name: String,
    pub node: NodeId,
    pub kind: TapKind,
}

#[derive(Clone, Debug)]
enum Aux {
    None,
    Bn(BnCache),
    Ce(Vec<f64>),
}

#[derive(Clone, Debug)]
struct Pass {
    values: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
    labels: Option<Vec<usize>>,
    mode: NormMode,
    node_grads: Vec<Option<Tensor>>,
}

/// Builds a [`Graph`] node by node; node order is a topological order.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Param>,
    taps: Vec<Tap>,
    init_seed: u64,
    relu_count: usize,
}

impl GraphBuilder {
    /// `input_shape` excludes the batch dimension.
    pub fn new(input_shape: &[usize], init_seed: u64) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                op: Op::Input,
                inputs: vec![],
                shape: input_shape.to_vec(),
            }],
            params: vec![],
            taps: vec![],
            init_seed,
            relu_count: 0,
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn check(&self, id: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(id)
            .map(|n| n.shape.as_slice())
            .ok_or_else(|| Error::Graph(format!("unknown node {id}")))
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, inputs, shape });
        self.nodes.len() - 1
    }

    fn add_param(&mut self, name: String, value: Tensor, owner: NodeId) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Graph(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            value,
            grad,
            owner,
        });
        Ok(self.params.len() - 1)
    }

    /// Fan-in scaled uniform init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// seeded by the graph seed and the parameter name.
    fn uniform(&self, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut r = rng::rng(rng::hash_str(self.init_seed, name));
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("sized from shape")
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        if s.len() != 3 {
            return Err(Error::Shape(format!("conv2d {name} expects C,H,W input, got {s:?}")));
        }
        if !(stride == 1 || stride == 2) || out_channels == 0 || kernel == 0 {
            return Err(Error::Graph(format!("conv2d {name}: unsupported geometry")));
        }
        let ho = kernels::conv_out_dim(s[1], kernel, stride, pad);
        let wo = kernels::conv_out_dim(s[2], kernel, stride, pad);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::Shape(format!("conv2d {name}: kernel larger than input {s:?}")));
        };
        let wshape = [out_channels, s[0], kernel, kernel];
        let value = self.uniform(name, &wshape, s[0] * kernel * kernel);
        let node = self.nodes.len();
        let weight = self.add_param(format!("{name}.weight"), value, node)?;
        Ok(self.push(
            Op::Conv2d {
                weight,
                stride,
                pad,
            },
            vec![x],
            vec![out_channels, ho, wo],
        ))
    }

    pub fn linear(&mut self, name: &str, x: NodeId, out: usize, bias: bool) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        if s.len() != 1 {
            return Err(Error::Shape(format!("linear {name} expects flat input, got {s:?}")));
        }
        let node = self.nodes.len();
        let w = self.uniform(&format!("{name}.weight"), &[out, s[0]], s[0]);
        let weight = self.add_param(format!("{name}.weight"), w, node)?;
        let bias = if bias {
            let b = self.uniform(&format!("{name}.bias"), &[out], s[0]);
            Some(self.add_param(format!("{name}.bias"), b, node)?)
        } else {
            None
        };
        Ok(self.push(Op::Linear { weight, bias }, vec![x], vec![out]))
    }

    /// Adds a rectifier and taps its output as `relu{k}`.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        let id = self.push(Op::Relu, vec![x], s);
        let name = format!("relu{}", self.relu_count);
        self.relu_count += 1;
        self.tap(&name, id, TapKind::Relu)?;
        Ok(id)
    }

    pub fn batchnorm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        let c = s[0];
        let node = self.nodes.len();
        let gamma = self.add_param(format!("{name}.gamma"), Tensor::full(&[c], 1.0), node)?;
        let beta = self.add_param(format!("{name}.beta"), Tensor::zeros(&[c]), node)?;
        Ok(self.push(Op::BatchNorm { gamma, beta }, vec![x], s))
    }

    pub fn avg_pool3x3(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        if s.len() != 3 {
            return Err(Error::Shape(format!("avg pool expects C,H,W, got {s:?}")));
        }
        Ok(self.push(Op::AvgPool3x3, vec![x], s))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        if s.len() != 3 {
            return Err(Error::Shape(format!("global pool expects C,H,W, got {s:?}")));
        }
        Ok(self.push(Op::GlobalAvgPool, vec![x], vec![s[0]]))
    }

    /// Elementwise sum of one or more equally shaped nodes.
    pub fn add(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = self
            .check(*xs.first().ok_or_else(|| Error::Graph("add of nothing".into()))?)?
            .to_vec();
        for &x in xs {
            if self.check(x)? != first.as_slice() {
                return Err(Error::Shape(format!(
                    "add: {:?} vs {first:?}",
                    self.nodes[x].shape
                )));
            }
        }
        Ok(self.push(Op::Add, xs.to_vec(), first))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let s = self.check(x)?.to_vec();
        Ok(self.push(Op::Scale(factor), vec![x], s))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = self
            .check(*xs.first().ok_or_else(|| Error::Graph("concat of nothing".into()))?)?
            .to_vec();
        let mut c = 0;
        for &x in xs {
            let s = self.check(x)?;
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(Error::Shape(format!("concat: {s:?} vs {first:?}")));
            }
            c += s[0];
        }
        let mut shape = first;
        shape[0] = c;
        Ok(self.push(Op::Concat, xs.to_vec(), shape))
    }

    pub fn tap(&mut self, name: &str, node: NodeId, kind: TapKind) -> Result<()> {
        self.check(node)?;
        if self.taps.iter().any(|t| t.name == name) {
            return Err(Error::Graph(format!("duplicate tap {name}")));
        }
        self.taps.push(Tap {
            name: name.to_string(),
            node,
            kind,
        });
        Ok(())
    }

    /// Freeze the graph with `output` as its result node. A softmax
    /// cross-entropy node over `output` is appended when it is rank one.
    pub fn finish(mut self, output: NodeId) -> Result<Graph> {
        self.check(output)?;
        let loss = if self.nodes[output].shape.len() == 1 {
            Some(self.push(Op::SoftmaxCrossEntropy, vec![output], vec![1]))
        } else {
            None
        };
        Ok(Graph {
            nodes: self.nodes,
            params: self.params,
            taps: self.taps,
            output,
            loss,
            pass: None,
        })
    }
}

/// A materialized, differentiable network.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Param>,
    taps: Vec<Tap>,
    output: NodeId,
    loss: Option<NodeId>,
    pass: Option<Pass>,
}

impl Graph {
    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output].shape
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Multiply-accumulate count of one forward pass for a single sample.
    pub fn flops(&self) -> u64 {
        self.nodes
            .iter()
            .map(|n| match &n.op {
                Op::Conv2d { weight, .. } => {
                    let w = self.params[*weight].value.shape();
                    (n.shape.iter().product::<usize>() * w[1] * w[2] * w[3]) as u64
                }
                Op::Linear { weight, .. } => self.params[*weight].value.len() as u64,
                _ => 0,
            })
            .sum()
    }

    /// All parameter values concatenated in parameter order.
    pub fn param_vector(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_param_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::LengthMismatch(v.len(), self.num_params()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        self.pass = None;
        Ok(())
    }

    pub fn grad_vector(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape().len() + 1 || x.sample_shape() != self.input_shape()
        {
            return Err(Error::Shape(format!(
                "input {:?} does not match declared [N]{:?}",
                x.shape(),
                self.input_shape()
            )));
        }
        if x.batch() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("input".into()));
        }
        Ok(())
    }

    /// Run the network and return its output. Tapped values remain available
    /// until the next pass.
    pub fn forward(&mut self, x: &Tensor, mode: NormMode) -> Result<Tensor> {
        self.run(x, None, mode)?;
        Ok(self.value(self.output).clone())
    }

    /// Run the network and its cross-entropy head; returns the mean loss.
    pub fn forward_loss(&mut self, x: &Tensor, labels: &[usize], mode: NormMode) -> Result<f64> {
        let loss = self
            .loss
            .ok_or_else(|| Error::Graph("graph has no classification head".into()))?;
        if labels.len() != x.batch() {
            return Err(Error::LengthMismatch(labels.len(), x.batch()));
        }
        let classes = self.output_shape()[0];
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::Config(format!("label out of range for {classes} classes")));
        }
        self.run(x, Some(labels), mode)?;
        Ok(self.value(loss).data()[0])
    }

    fn value(&self, id: NodeId) -> &Tensor {
        self.pass.as_ref().expect("pass ran").values[id]
            .as_ref()
            .expect("node evaluated")
    }

    fn run(&mut self, x: &Tensor, labels: Option<&[usize]>, mode: NormMode) -> Result<()> {
        self.check_input(x)?;
        let n = self.nodes.len();
        let mut values: Vec<Option<Tensor>> = vec![None; n];
        let mut aux = vec![Aux::None; n];
        for id in 0..n {
            let node = &self.nodes[id];
            let get = |i: usize| values[node.inputs[i]].as_ref().expect("topological order");
            let out = match &node.op {
                Op::Input => x.clone(),
                Op::Conv2d {
                    weight,
                    stride,
                    pad,
                } => kernels::conv2d_forward(get(0), &self.params[*weight].value, *stride, *pad),
                Op::Linear { weight, bias } => {
                    let xin = get(0);
                    let flat = xin.clone().reshape(vec![xin.batch(), xin.sample_len()])?;
                    kernels::linear_forward(
                        &flat,
                        &self.params[*weight].value,
                        bias.map(|b| &self.params[b].value),
                    )
                }
                Op::Relu => kernels::relu_forward(get(0)),
                Op::BatchNorm { gamma, beta } => match mode {
                    NormMode::Bypass => get(0).clone(),
                    NormMode::BatchStats => {
                        let (y, cache) = kernels::batchnorm_forward(
                            get(0),
                            &self.params[*gamma].value,
                            &self.params[*beta].value,
                        );
                        aux[id] = Aux::Bn(cache);
                        y
                    }
                },
                Op::AvgPool3x3 => kernels::avgpool3_forward(get(0)),
                Op::GlobalAvgPool => kernels::gap_forward(get(0)),
                Op::Add => {
                    let mut acc = get(0).clone();
                    for i in 1..node.inputs.len() {
                        acc.add_assign(get(i));
                    }
                    acc
                }
                Op::Scale(f) => {
                    let f = *f;
                    get(0).map(|v| v * f)
                }
                Op::Concat => {
                    let parts: Vec<&Tensor> = (0..node.inputs.len()).map(get).collect();
                    kernels::concat_forward(&parts)
                }
                Op::SoftmaxCrossEntropy => match labels {
                    None => continue,
                    Some(l) => {
                        let (loss, probs) = kernels::softmax_ce_forward(get(0), l);
                        aux[id] = Aux::Ce(probs);
                        Tensor::scalar(loss)
                    }
                },
            };
            values[id] = Some(out);
        }
        self.pass = Some(Pass {
            values,
            aux,
            labels: labels.map(|l| l.to_vec()),
            mode,
            node_grads: vec![],
        });
        Ok(())
    }

    /// Backpropagate `seed` (gradient w.r.t. the output) and fill parameter
    /// gradients.
    pub fn backward(&mut self, seed: &Tensor) -> Result<()> {
        let out = self.output;
        let pass = self.pass.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let v = pass.values[out].as_ref().expect("output evaluated");
        if v.shape() != seed.shape() {
            return Err(Error::Shape(format!(
                "seed {:?} vs output {:?}",
                seed.shape(),
                v.shape()
            )));
        }
        self.backprop(out, seed.clone())
    }

    /// Backpropagate the cross-entropy loss of the last [`forward_loss`].
    ///
    /// [`forward_loss`]: Graph::forward_loss
    pub fn backward_loss(&mut self) -> Result<()> {
        let pass = self.pass.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let loss = self.loss.filter(|&l| pass.values[l].is_some()).ok_or_else(|| {
            Error::Graph("backward_loss requires a forward_loss pass".into())
        })?;
        self.backprop(loss, Tensor::scalar(1.0))
    }

    fn backprop(&mut self, start: NodeId, seed: Tensor) -> Result<()> {
        let mut pass = self.pass.take().ok_or(Error::BackwardBeforeForward)?;
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
        let n = self.nodes.len();
        let keep: Vec<bool> = (0..n)
            .map(|id| id == 0 || self.taps.iter().any(|t| t.node == id))
            .collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[start] = Some(seed);
        for id in (0..=start).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let val = |i: usize| pass.values[node.inputs[i]].as_ref().expect("evaluated");
            let mut contrib: Vec<(NodeId, Tensor)> = Vec::with_capacity(node.inputs.len());
            match &node.op {
                Op::Input => {}
                Op::Conv2d {
                    weight,
                    stride,
                    pad,
                } => {
                    let (dx, dw) =
                        kernels::conv2d_backward(val(0), &self.params[*weight].value, &g, *stride, *pad);
                    self.params[*weight].grad.add_assign(&dw);
                    contrib.push((node.inputs[0], dx));
                }
                Op::Linear { weight, bias } => {
                    let xin = val(0);
                    let flat = xin.clone().reshape(vec![xin.batch(), xin.sample_len()])?;
                    let (dx, dw, db) = kernels::linear_backward(&flat, &self.params[*weight].value, &g);
                    self.params[*weight].grad.add_assign(&dw);
                    if let Some(b) = bias {
                        self.params[*b].grad.add_assign(&db);
                    }
                    contrib.push((node.inputs[0], dx.reshape(xin.shape().to_vec())?));
                }
                Op::Relu => {
                    let y = pass.values[id].as_ref().expect("evaluated");
                    contrib.push((node.inputs[0], kernels::relu_backward(y, &g)));
                }
                Op::BatchNorm { gamma, beta } => match &pass.aux[id] {
                    Aux::Bn(cache) => {
                        let (dx, dg, db) =
                            kernels::batchnorm_backward(cache, &self.params[*gamma].value, &g);
                        self.params[*gamma].grad.add_assign(&dg);
                        self.params[*beta].grad.add_assign(&db);
                        contrib.push((node.inputs[0], dx));
                    }
                    _ => contrib.push((node.inputs[0], g.clone())),
                },
                Op::AvgPool3x3 => contrib.push((node.inputs[0], kernels::avgpool3_backward(&g))),
                Op::GlobalAvgPool => {
                    contrib.push((node.inputs[0], kernels::gap_backward(val(0).shape(), &g)))
                }
                Op::Add => {
                    for &i in &node.inputs {
                        contrib.push((i, g.clone()));
                    }
                }
                Op::Scale(f) => {
                    let f = *f;
                    contrib.push((node.inputs[0], g.map(|v| v * f)));
                }
                Op::Concat => {
                    let shapes: Vec<Vec<usize>> = (0..node.inputs.len())
                        .map(|i| val(i).shape().to_vec())
                        .collect();
                    for (i, t) in kernels::concat_backward(&shapes, &g).into_iter().enumerate() {
                        contrib.push((node.inputs[i], t));
                    }
                }
                Op::SoftmaxCrossEntropy => {
                    let Aux::Ce(probs) = &pass.aux[id] else {
                        return Err(Error::BackwardBeforeForward);
                    };
                    let labels = pass.labels.as_ref().expect("loss pass has labels");
                    let dl = kernels::softmax_ce_backward(probs, labels, val(0).shape(), g.data()[0]);
                    contrib.push((node.inputs[0], dl));
                }
            }
            for (i, t) in contrib {
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
            if keep[id] {
                grads[id] = Some(g);
            }
        }
        pass.node_grads = grads;
        self.pass = Some(pass);
        Ok(())
    }

    fn tap_node(&self, name: &str) -> Option<NodeId> {
        self.taps.iter().find(|t| t.name == name).map(|t| t.node)
    }

    /// Value captured at a tap during the last pass.
    pub fn tap_value(&self, name: &str) -> Option<&Tensor> {
        let id = self.tap_node(name)?;
        self.pass.as_ref()?.values[id].as_ref()
    }

    /// Gradient at a tap from the last backward pass.
    pub fn tap_grad(&self, name: &str) -> Option<&Tensor> {
        let id = self.tap_node(name)?;
        self.pass.as_ref()?.node_grads.get(id)?.as_ref()
    }

    /// Gradient with respect to the network input from the last backward pass.
    pub fn input_grad(&self) -> Option<&Tensor> {
        self.pass.as_ref()?.node_grads.first()?.as_ref()
    }

    /// Captured values for every tap of `kind`, in tap order.
    pub fn tapped(&self, kind: TapKind) -> Vec<(&str, &Tensor)> {
        let Some(pass) = self.pass.as_ref() else {
            return vec![];
        };
        self.taps
            .iter()
            .filter(|t| t.kind == kind)
            .filter_map(|t| pass.values[t.node].as_ref().map(|v| (t.name.as_str(), v)))
            .collect()
    }

    /// Per-channel batch variances of every normalization layer in the last
    /// batch-statistics pass.
    pub fn batchnorm_variances(&self) -> Vec<&[f64]> {
        let Some(pass) = self.pass.as_ref() else {
            return vec![];
        };
        pass.aux
            .iter()
            .filter_map(|a| match a {
                Aux::Bn(c) => Some(c.var.as_slice()),
                _ => None,
            })
            .collect()
    }

    pub fn last_mode(&self) -> Option<NormMode> {
        self.pass.as_ref().map(|p| p.mode)
    }

    /// Drop cached activations.
    pub fn clear_pass(&mut self) {
        self.pass = None;
    }
}
