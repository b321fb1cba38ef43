#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zcpt_core::autodiff::{Graph, GraphBuilder, NodeId, NormMode};
use zcpt_core::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Randomize every parameter of `g` (so batchnorm affine terms are not the
/// identity during gradient checks).
pub fn randomize_params(g: &mut Graph, seed: u64) {
    let n = g.num_params();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    g.set_param_vector(&v).unwrap();
}

/// Scalar objective used by the checks: `L = sum(weights * output)` (or the
/// cross-entropy loss when `labels` is given).
pub struct Objective {
    pub weights: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Objective {
    pub fn eval(&self, g: &mut Graph, x: &Tensor) -> f64 {
        match &self.labels {
            Some(l) => g.forward_loss(x, l, NormMode::BatchStats).unwrap(),
            None => {
                let y = g.forward(x, NormMode::BatchStats).unwrap();
                y.data().iter().zip(self.weights.data()).map(|(a, b)| a * b).sum()
            }
        }
    }

    /// Returns `(param grads, input grad)` from reverse mode.
    pub fn grads(&self, g: &mut Graph, x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        match &self.labels {
            Some(l) => {
                g.forward_loss(x, l, NormMode::BatchStats).unwrap();
                g.backward_loss().unwrap();
            }
            None => {
                g.forward(x, NormMode::BatchStats).unwrap();
                g.backward(&self.weights).unwrap();
            }
        }
        (g.grad_vector(), g.input_grad().unwrap().data().to_vec())
    }
}

/// Central-difference oracle over every parameter and every input entry.
/// Returns the worst relative error `|a - n| / max(1, |a|, |n|)`.
pub fn gradcheck(g: &mut Graph, x: &Tensor, obj: &Objective) -> f64 {
    let h = 1e-5;
    let (pg, xg) = obj.grads(g, x);
    let theta = g.param_vector();
    let mut worst: f64 = 0.0;
    let rel = |a: f64, n: f64| (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] += h;
        g.set_param_vector(&t).unwrap();
        let up = obj.eval(g, x);
        t[i] -= 2.0 * h;
        g.set_param_vector(&t).unwrap();
        let down = obj.eval(g, x);
        worst = worst.max(rel(pg[i], (up - down) / (2.0 * h)));
    }
    g.set_param_vector(&theta).unwrap();
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let up = obj.eval(g, &xp);
        xp.data_mut()[i] -= 2.0 * h;
        let down = obj.eval(g, &xp);
        worst = worst.max(rel(xg[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Names of the ten operators and a builder for a graph exercising each.
pub const OPERATORS: [&str; 10] = [
    "conv2d",
    "linear",
    "relu",
    "batchnorm",
    "avgpool3x3",
    "global_avg_pool",
    "add",
    "scale",
    "concat",
    "softmax_cross_entropy",
];

/// Build a small graph whose gradient path goes through `op`, plus an input
/// shape and objective. Every graph is seeded by `seed`.
pub fn operator_case(op: &str, seed: u64) -> (Graph, Tensor, Objective) {
    let img = [2usize, 4, 4];
    let n = 3;
    let mut b = GraphBuilder::new(&img, seed);
    let x = b.input();
    let out: NodeId = match op {
        "conv2d" => {
            let s1 = b.conv2d("c1", x, 3, 3, 1, 1).unwrap();
            b.conv2d("c2", s1, 2, 3, 2, 1).unwrap()
        }
        "linear" => {
            let p = b.global_avg_pool(x).unwrap();
            b.linear("fc", p, 3, true).unwrap()
        }
        "relu" => b.relu(x).unwrap(),
        "batchnorm" => b.batchnorm("bn", x).unwrap(),
        "avgpool3x3" => b.avg_pool3x3(x).unwrap(),
        "global_avg_pool" => {
            let c = b.conv2d("c", x, 3, 1, 1, 0).unwrap();
            b.global_avg_pool(c).unwrap()
        }
        "add" => {
            let c = b.conv2d("c", x, 2, 1, 1, 0).unwrap();
            b.add(&[x, c, c]).unwrap()
        }
        "scale" => {
            let c = b.conv2d("c", x, 2, 1, 1, 0).unwrap();
            b.scale(c, -0.7).unwrap()
        }
        "concat" => {
            let c = b.conv2d("c", x, 3, 3, 1, 1).unwrap();
            b.concat(&[x, c]).unwrap()
        }
        "softmax_cross_entropy" => {
            let p = b.global_avg_pool(x).unwrap();
            b.linear("fc", p, 4, true).unwrap()
        }
        other => panic!("unknown operator {other}"),
    };
    let mut g = b.finish(out).unwrap();
    randomize_params(&mut g, seed ^ 0xabc);
    let mut xs = random_tensor(&[n, img[0], img[1], img[2]], seed.wrapping_add(1));
    if op == "relu" {
        // keep entries away from the kink so central differences are valid
        for v in xs.data_mut() {
            if v.abs() < 0.05 {
                *v = 0.05f64.copysign(*v);
            }
        }
    }
    let mut out_shape = vec![n];
    out_shape.extend_from_slice(g.output_shape());
    let weights = random_tensor(&out_shape, seed.wrapping_add(2));
    let labels = (op == "softmax_cross_entropy").then(|| (0..n).map(|i| (i + seed as usize) % 4).collect());
    (g, xs, Objective { weights, labels })
}
