//! A small dense-tensor engine with reverse-mode differentiation.
//!
//! The operator set is closed: conv2d, linear, relu, batchnorm, 3x3 average
//! pooling, global average pooling, add, scalar scale, concat and softmax
//! cross-entropy. Graphs are static and built once by [`GraphBuilder`].

mod graph;
mod hvp;
pub mod kernels;
mod train;

pub use graph::{Graph, GraphBuilder, Node, NodeId, NormMode, Op, Param, ParamId, Tap, TapKind};
pub use hvp::{default_eps, finite_difference_hvp};
pub use train::{accuracy, sgd_train, TrainConfig};
