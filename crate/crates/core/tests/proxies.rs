mod common;

use common::random_tensor;
use proptest::prelude::*;
use zcpt_core::autodiff::{Graph, GraphBuilder, NormMode};
use zcpt_core::data::Split;
use zcpt_core::proxies::{compute_proxy, compute_proxy_batched, hamming_kernel_logdet, ProxyId};
use zcpt_core::tabular::{synth_dataset, SynthDatasetCfg};
use zcpt_core::{NetConfig, Space, Tensor};

fn linear_2_to_1(w: [f64; 2]) -> Graph {
    let mut b = GraphBuilder::new(&[2], 0);
    let x = b.input();
    let y = b.linear("fc", x, 1, false).unwrap();
    let mut g = b.finish(y).unwrap();
    g.set_param_vector(&w).unwrap();
    g
}

fn relu_only(width: usize) -> Graph {
    let mut b = GraphBuilder::new(&[width], 0);
    let x = b.input();
    let r = b.relu(x).unwrap();
    b.finish(r).unwrap()
}

fn mlp(seed: u64) -> Graph {
    let mut b = GraphBuilder::new(&[3], seed);
    let x = b.input();
    let h = b.linear("fc1", x, 4, true).unwrap();
    let r = b.relu(h).unwrap();
    let y = b.linear("fc2", r, 3, true).unwrap();
    b.finish(y).unwrap()
}

fn mlp_batch(seed: u64) -> Split {
    let x = random_tensor(&[5, 3], seed);
    Split::new(x, vec![0, 2, 1, 1, 0]).unwrap()
}

fn toy_data() -> Split {
    let cfg = SynthDatasetCfg {
        samples_per_class: 16,
        image_size: 8,
        ..Default::default()
    };
    synth_dataset(&cfg).unwrap().train
}

fn toy_net(seed: u64) -> Graph {
    let net = NetConfig {
        width: 4,
        input_shape: vec![3, 8, 8],
        init_seed: seed,
        ..Default::default()
    };
    Space::toy_chain(2).unwrap().supernet().instantiate(&net).unwrap()
}

/// Central-difference gradient of the batch loss.
fn fd_loss_grad(g: &mut Graph, batch: &Split) -> Vec<f64> {
    let h = 1e-6;
    let theta = g.param_vector();
    let mut out = vec![];
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] += h;
        g.set_param_vector(&t).unwrap();
        let up = g.forward_loss(&batch.inputs, &batch.labels, NormMode::BatchStats).unwrap();
        t[i] -= 2.0 * h;
        g.set_param_vector(&t).unwrap();
        let down = g.forward_loss(&batch.inputs, &batch.labels, NormMode::BatchStats).unwrap();
        out.push((up - down) / (2.0 * h));
    }
    g.set_param_vector(&theta).unwrap();
    out
}

#[test]
fn synflow_on_two_weight_linear_net_is_five() {
    let mut g = linear_2_to_1([2.0, -3.0]);
    let s = compute_proxy(&mut g, ProxyId::Synflow, None, 0).unwrap();
    assert_eq!(s.value, 5.0);
    assert!(!s.degenerate);
}

#[test]
fn synflow_ignores_the_seed() {
    let mut g = toy_net(3);
    let a = compute_proxy(&mut g, ProxyId::Synflow, None, 1).unwrap();
    let b = compute_proxy(&mut g, ProxyId::Synflow, None, 999).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
}

#[test]
fn nwot_complementary_codes_give_log_16() {
    let mut g = relu_only(4);
    let x = Tensor::new(vec![2, 4], vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0]).unwrap();
    let batch = Split::new(x, vec![0, 0]).unwrap();
    let s = compute_proxy(&mut g, ProxyId::Nwot, Some(&batch), 0).unwrap();
    assert!((s.value - 16f64.ln()).abs() < 1e-9, "{}", s.value);
    assert!(!s.degenerate);
}

#[test]
fn nwot_identical_codes_are_degenerate() {
    let mut g = relu_only(4);
    let x = Tensor::new(vec![2, 4], vec![1.0, -1.0, 1.0, -1.0, 2.0, -5.0, 3.0, -0.5]).unwrap();
    let batch = Split::new(x, vec![0, 0]).unwrap();
    let s = compute_proxy(&mut g, ProxyId::Nwot, Some(&batch), 0).unwrap();
    assert!(s.degenerate);
}

#[test]
fn nwot_is_invariant_to_batch_order() {
    let data = toy_data();
    let batch = data.sample_batch(12, 4).unwrap();
    let order: Vec<usize> = (0..batch.len()).rev().collect();
    let permuted = batch.subset(&order);
    let mut g = toy_net(0);
    let a = compute_proxy(&mut g, ProxyId::Nwot, Some(&batch), 0).unwrap();
    let b = compute_proxy(&mut g, ProxyId::Nwot, Some(&permuted), 0).unwrap();
    assert!((a.value - b.value).abs() < 1e-9 * a.value.abs().max(1.0));
}

#[test]
fn every_proxy_restores_parameters_bit_for_bit() {
    let data = toy_data();
    let batch = data.sample_batch(8, 1).unwrap();
    let mut g = toy_net(5);
    let before: Vec<u64> = g.param_vector().iter().map(|v| v.to_bits()).collect();
    for p in ProxyId::ALL {
        compute_proxy(&mut g, p, Some(&batch), 2).unwrap();
        let after: Vec<u64> = g.param_vector().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after, "{p}");
    }
}

#[test]
fn data_proxies_need_a_batch() {
    let mut g = toy_net(0);
    for p in ProxyId::ALL.into_iter().filter(|p| p.needs_data()) {
        assert!(compute_proxy(&mut g, p, None, 0).is_err(), "{p}");
    }
}

#[test]
fn snip_and_grad_norm_match_finite_differences() {
    let mut g = mlp(7);
    let batch = mlp_batch(8);
    let grad = fd_loss_grad(&mut g, &batch);
    let theta = g.param_vector();
    let snip: f64 = grad.iter().zip(&theta).map(|(g, t)| (g * t).abs()).sum();
    let s = compute_proxy(&mut g, ProxyId::Snip, Some(&batch), 0).unwrap();
    assert!((s.value - snip).abs() < 1e-6, "{} vs {snip}", s.value);
    // per-tensor norms: fc1.weight, fc1.bias, fc2.weight, fc2.bias
    let mut off = 0;
    let mut gn = 0.0;
    for p in g.params() {
        let n = p.value.len();
        gn += grad[off..off + n].iter().map(|v| v * v).sum::<f64>().sqrt();
        off += n;
    }
    let s = compute_proxy(&mut g, ProxyId::GradNorm, Some(&batch), 0).unwrap();
    assert!((s.value - gn).abs() < 1e-6, "{} vs {gn}", s.value);
}

#[test]
fn grasp_matches_finite_difference_hessian_product() {
    let mut g = mlp(11);
    let batch = mlp_batch(12);
    let grad = fd_loss_grad(&mut g, &batch);
    let theta = g.param_vector();
    // Hg ~ (grad(theta + eps g) - grad(theta - eps g)) / 2 eps
    let eps = 1e-4;
    let shifted = |s: f64, g: &mut Graph| {
        let t: Vec<f64> = theta.iter().zip(&grad).map(|(t, d)| t + s * eps * d).collect();
        g.set_param_vector(&t).unwrap();
        let (_, gr) = g.loss_gradient(&batch).unwrap();
        gr
    };
    let up = shifted(1.0, &mut g);
    let down = shifted(-1.0, &mut g);
    g.set_param_vector(&theta).unwrap();
    let expected: f64 = -(0..theta.len()).map(|i| (up[i] - down[i]) / (2.0 * eps) * theta[i]).sum::<f64>();
    let s = compute_proxy(&mut g, ProxyId::Grasp, Some(&batch), 0).unwrap();
    assert!((s.value - expected).abs() < 1e-5 * expected.abs().max(1.0), "{} vs {expected}", s.value);
}

#[test]
fn batched_scores_match_single_scores() {
    let data = toy_data();
    let mut nets = vec![toy_net(0), toy_net(1)];
    for p in [ProxyId::Nwot, ProxyId::Snip, ProxyId::Synflow] {
        let batched = compute_proxy_batched(&mut nets, p, Some(&data), 8, 77).unwrap();
        let batch = data.sample_batch(8, 77).unwrap();
        for (n, b) in nets.iter_mut().zip(&batched) {
            let single = compute_proxy(n, p, Some(&batch), 77).unwrap();
            assert_eq!(single.value.to_bits(), b.value.to_bits(), "{p}");
        }
    }
}

#[test]
fn every_proxy_is_finite_on_the_toy_supernet() {
    let data = toy_data();
    let batch = data.sample_batch(8, 3).unwrap();
    let mut g = toy_net(2);
    for p in ProxyId::ALL {
        let s = compute_proxy(&mut g, p, Some(&batch), 3).unwrap();
        assert!(s.value.is_finite() && !s.degenerate, "{p}: {}", s.value);
    }
}

/// Determinant by cofactor expansion; exact enough for tiny kernels.
fn det(m: &[Vec<f64>]) -> f64 {
    if m.len() == 1 {
        return m[0][0];
    }
    (0..m.len())
        .map(|j| {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|r| r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][j] * det(&minor)
        })
        .sum()
}

proptest! {
    #[test]
    fn hamming_logdet_matches_cofactor_oracle(raw in prop::collection::vec(prop::collection::vec(any::<bool>(), 10), 2..5)) {
        let bits = 10;
        let codes: Vec<Vec<u64>> = raw
            .iter()
            .map(|c| vec![c.iter().enumerate().fold(0u64, |w, (k, &b)| w | ((b as u64) << k))])
            .collect();
        let k: Vec<Vec<f64>> = raw
            .iter()
            .map(|a| raw.iter().map(|b| (bits - a.iter().zip(b).filter(|(x, y)| x != y).count()) as f64).collect())
            .collect();
        let d = det(&k);
        let (logdet, degenerate) = hamming_kernel_logdet(&codes, bits);
        if d > 1e-6 {
            prop_assert!(!degenerate);
            prop_assert!((logdet - d.ln()).abs() < 1e-9, "{} vs {}", logdet, d.ln());
        } else {
            prop_assert!(degenerate);
        }
    }
}
