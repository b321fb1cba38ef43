//! Training-free scores of untrained networks. Higher is better for every
//! stored score.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NormMode, TapKind};
use crate::data::{Batch, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Default minibatch size for data-dependent proxies.
pub const DEFAULT_BATCH_SIZE: usize = 32;
/// Kernel determinants at or below this are degenerate.
pub const NWOT_DET_FLOOR: f64 = 1e-12;
pub const ZEN_REPEATS: usize = 8;
pub const ZEN_ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyId {
    Nwot,
    Synflow,
    Snip,
    Grasp,
    GradNorm,
    Fisher,
    ZenScore,
}

impl ProxyId {
    pub const ALL: [ProxyId; 7] = [
        ProxyId::Nwot,
        ProxyId::Synflow,
        ProxyId::Snip,
        ProxyId::Grasp,
        ProxyId::GradNorm,
        ProxyId::Fisher,
        ProxyId::ZenScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProxyId::Nwot => "nwot",
            ProxyId::Synflow => "synflow",
            ProxyId::Snip => "snip",
            ProxyId::Grasp => "grasp",
            ProxyId::GradNorm => "grad_norm",
            ProxyId::Fisher => "fisher",
            ProxyId::ZenScore => "zen_score",
        }
    }

    /// Needs input samples from the dataset.
    pub fn needs_data(self) -> bool {
        !matches!(self, ProxyId::Synflow | ProxyId::ZenScore)
    }

    /// Needs labels (cross-entropy loss).
    pub fn needs_labels(self) -> bool {
        matches!(self, ProxyId::Snip | ProxyId::Grasp | ProxyId::GradNorm | ProxyId::Fisher)
    }

    pub fn needs_gradients(self) -> bool {
        !matches!(self, ProxyId::Nwot | ProxyId::ZenScore)
    }

    /// Reads activation taps.
    pub fn needs_taps(self) -> bool {
        matches!(self, ProxyId::Nwot | ProxyId::Fisher | ProxyId::ZenScore)
    }
}

impl fmt::Display for ProxyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProxyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "zen" {
            return Ok(ProxyId::ZenScore);
        }
        ProxyId::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown proxy {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyScore {
    pub value: f64,
    pub proxy: ProxyId,
    /// Seed of the random draws behind the score; `None` for synflow, which
    /// draws nothing.
    pub batch_seed: Option<u64>,
    /// Set when the score is not usable (singular nwot kernel, non-finite
    /// value). Callers decide whether to retry with another batch.
    pub degenerate: bool,
}

fn missing(proxy: ProxyId, what: &str) -> Error {
    Error::MissingInput {
        proxy: proxy.name().into(),
        what: what.into(),
    }
}

/// Score `net` with `proxy`. `batch` is required by data-dependent proxies;
/// zen_score only takes its batch size from it. `seed` drives every random
/// draw and is recorded as the batch seed.
pub fn compute_proxy(net: &mut Graph, proxy: ProxyId, batch: Option<&Batch>, seed: u64) -> Result<ProxyScore> {
    let data = || batch.ok_or_else(|| missing(proxy, "an input batch"));
    let (value, degenerate) = match proxy {
        ProxyId::Nwot => nwot(net, &data()?.inputs)?,
        ProxyId::Synflow => (synflow(net)?, false),
        ProxyId::Snip => {
            let (g, theta) = loss_grad(net, data()?)?;
            (g.iter().zip(&theta).map(|(g, t)| (g * t).abs()).sum(), false)
        }
        ProxyId::GradNorm => {
            loss_grad(net, data()?)?;
            let v = net.params().iter().map(|p| p.grad.norm()).sum();
            (v, false)
        }
        ProxyId::Grasp => (grasp(net, data()?)?, false),
        ProxyId::Fisher => (fisher(net, data()?)?, false),
        ProxyId::ZenScore => {
            let n = batch.map_or(DEFAULT_BATCH_SIZE, |b| b.len()).max(2);
            zen(net, n, seed)?
        }
    };
    Ok(ProxyScore {
        value,
        proxy,
        batch_seed: (proxy != ProxyId::Synflow).then_some(seed),
        degenerate: degenerate || !value.is_finite(),
    })
}

/// Score every net on the same minibatch, drawn from `data` by `seed`.
pub fn compute_proxy_batched(
    nets: &mut [Graph],
    proxy: ProxyId,
    data: Option<&Split>,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<ProxyScore>> {
    let batch = match data {
        Some(d) if proxy.needs_data() || proxy == ProxyId::ZenScore => Some(d.sample_batch(batch_size, seed)?),
        None if proxy.needs_data() => return Err(missing(proxy, "a dataset")),
        _ => None,
    };
    if let Some(first) = nets.first() {
        let shape = first.input_shape().to_vec();
        if let Some(n) = nets.iter().find(|n| n.input_shape() != shape.as_slice()) {
            return Err(Error::Shape(format!("{:?} vs {shape:?}", n.input_shape())));
        }
    }
    // activations are dropped after each score to bound peak memory
    nets.par_iter_mut()
        .map(|n| {
            let s = compute_proxy(n, proxy, batch.as_ref(), seed);
            n.clear_pass();
            s
        })
        .collect()
}

fn loss_grad(net: &mut Graph, batch: &Batch) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, g) = net.loss_gradient(batch)?;
    Ok((g, net.param_vector()))
}

/// Binary activation codes per sample, packed 64 bits per word, and the
/// total number of code bits.
fn activation_codes(net: &Graph) -> (Vec<Vec<u64>>, usize) {
    let taps = net.tapped(TapKind::Relu);
    let n = taps.first().map_or(0, |(_, t)| t.batch());
    let mut codes = vec![Vec::new(); n];
    let mut bits = 0;
    for (_, t) in taps {
        let len = t.sample_len();
        for (i, code) in codes.iter_mut().enumerate() {
            let s = t.sample(i);
            for (k, &v) in s.iter().enumerate() {
                let pos = bits + k;
                if pos / 64 >= code.len() {
                    code.push(0);
                }
                if v > 0.0 {
                    code[pos / 64] |= 1 << (pos % 64);
                }
            }
        }
        bits += len;
    }
    for code in &mut codes {
        code.resize(bits.div_ceil(64), 0);
    }
    (codes, bits)
}

/// `log det K` with `K_ij = N_A - hamming(c_i, c_j)`; returns
/// `(logdet, degenerate)`.
pub fn hamming_kernel_logdet(codes: &[Vec<u64>], num_bits: usize) -> (f64, bool) {
    let n = codes.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d: u32 = codes[i].iter().zip(&codes[j]).map(|(a, b)| (a ^ b).count_ones()).sum();
        (num_bits - d as usize) as f64
    });
    // pivots this small are rounding noise of an exactly singular matrix
    let tiny = n as f64 * f64::EPSILON * k.amax();
    let lu = k.lu();
    let u = lu.u();
    let mut logdet = 0.0;
    let mut negative = false;
    for i in 0..n {
        let d = u[(i, i)];
        if d.abs() <= tiny {
            return (f64::NEG_INFINITY, true);
        }
        negative ^= d < 0.0;
        logdet += d.abs().ln();
    }
    // the row permutation flips the sign once per transposition
    negative ^= lu.p().determinant::<f64>() < 0.0;
    let degenerate = negative || logdet <= NWOT_DET_FLOOR.ln();
    (logdet, degenerate)
}

fn nwot(net: &mut Graph, inputs: &Tensor) -> Result<(f64, bool)> {
    net.forward(inputs, NormMode::BatchStats)?;
    let (codes, bits) = activation_codes(net);
    if bits == 0 {
        return Err(missing(ProxyId::Nwot, "at least one ReLU tap"));
    }
    Ok(hamming_kernel_logdet(&codes, bits))
}

/// Data-free: all-ones input through the `|theta|` network with
/// normalization bypassed. Works on a clone so `net` is untouched.
fn synflow(net: &Graph) -> Result<f64> {
    let mut g = net.clone();
    for p in g.params_mut() {
        for v in p.value.data_mut() {
            *v = v.abs();
        }
    }
    g.clear_pass();
    let mut shape = vec![1];
    shape.extend_from_slice(g.input_shape());
    let y = g.forward(&Tensor::full(&shape, 1.0), NormMode::Bypass)?;
    g.backward(&Tensor::full(y.shape(), 1.0))?;
    Ok(g.params()
        .iter()
        .flat_map(|p| p.grad.data().iter().zip(p.value.data()).map(|(g, t)| g * t))
        .sum())
}

fn grasp(net: &mut Graph, batch: &Batch) -> Result<f64> {
    let (g, theta) = loss_grad(net, batch)?;
    let hg = match net.hvp(batch, &g, None) {
        Ok(h) => h,
        Err(Error::ZeroDirection) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    Ok(-hg.iter().zip(&theta).map(|(h, t)| h * t).sum::<f64>())
}

fn fisher(net: &mut Graph, batch: &Batch) -> Result<f64> {
    net.loss_gradient(batch)?;
    let names: Vec<String> = net
        .taps()
        .iter()
        .filter(|t| t.kind == TapKind::Block)
        .map(|t| t.name.clone())
        .collect();
    let mut total = 0.0;
    for name in names {
        let (Some(a), Some(da)) = (net.tap_value(&name), net.tap_grad(&name)) else {
            continue;
        };
        let s = a.shape();
        let (n, c) = (s[0], s[1]);
        let hw: usize = s[2..].iter().product();
        for ch in 0..c {
            let mut acc = 0.0;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for k in off..off + hw {
                    acc += a.data()[k] * da.data()[k];
                }
            }
            total += (acc / (n * hw) as f64).powi(2);
        }
    }
    Ok(total)
}

fn gaussian(shape: &[usize], r: &mut rng::Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(r)).collect()).expect("sized from shape")
}

fn zen(net: &mut Graph, batch: usize, seed: u64) -> Result<(f64, bool)> {
    if !net.taps().iter().any(|t| t.name == "features") {
        return Err(missing(ProxyId::ZenScore, "a 'features' tap"));
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(net.input_shape());
    let mut r = rng::rng(rng::hash_str(seed, "zen"));
    let mut diff = 0.0;
    let mut bn = 0.0;
    for _ in 0..ZEN_REPEATS {
        let x = gaussian(&shape, &mut r);
        let eps = gaussian(&shape, &mut r);
        let mut xp = x.clone();
        for (v, e) in xp.data_mut().iter_mut().zip(eps.data()) {
            *v += ZEN_ALPHA * e;
        }
        net.forward(&xp, NormMode::BatchStats)?;
        let fp = net.tap_value("features").expect("tap checked").clone();
        net.forward(&x, NormMode::BatchStats)?;
        let f = net.tap_value("features").expect("tap checked");
        let d: f64 = f.data().iter().zip(fp.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        diff += d / ZEN_ALPHA;
        bn += net
            .batchnorm_variances()
            .iter()
            .map(|v| (v.iter().sum::<f64>() / v.len() as f64).sqrt().ln())
            .sum::<f64>();
    }
    let m = ZEN_REPEATS as f64;
    let value = (diff / m).ln() + bn / m;
    Ok((value, !value.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GraphBuilder;

    fn codes(bits: &[&[bool]]) -> Vec<Vec<u64>> {
        bits.iter()
            .map(|b| vec![b.iter().enumerate().fold(0u64, |w, (k, &on)| w | ((on as u64) << k))])
            .collect()
    }

    #[test]
    fn kernel_of_complementary_codes() {
        let c = codes(&[&[true, false, true, false], &[false, true, false, true]]);
        let (v, deg) = hamming_kernel_logdet(&c, 4);
        assert!((v - 16f64.ln()).abs() < 1e-12);
        assert!(!deg);
    }

    #[test]
    fn kernel_of_identical_codes_is_degenerate() {
        let c = codes(&[&[true, false, true, true], &[true, false, true, true]]);
        assert!(hamming_kernel_logdet(&c, 4).1);
    }

    #[test]
    fn proxy_names_round_trip() {
        for p in ProxyId::ALL {
            assert_eq!(p.name().parse::<ProxyId>().unwrap(), p);
        }
        assert!("tenas".parse::<ProxyId>().is_err());
    }

    #[test]
    fn data_proxies_demand_a_batch() {
        let mut b = GraphBuilder::new(&[2], 0);
        let x = b.input();
        let y = b.linear("fc", x, 2, false).unwrap();
        let mut g = b.finish(y).unwrap();
        for p in [ProxyId::Nwot, ProxyId::Snip, ProxyId::Grasp, ProxyId::GradNorm, ProxyId::Fisher] {
            assert!(matches!(compute_proxy(&mut g, p, None, 0), Err(Error::MissingInput { .. })));
        }
    }
}
