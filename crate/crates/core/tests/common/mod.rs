//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use gridguard::case::GridCase;
use gridguard::env::NODE_FEATURES;
use gridguard::neural::{GraphInput, PolicyNet, EMBEDDING, GCN_HIDDEN};
use nalgebra::DMatrix;
use rand::Rng;

/// Context width used by the random test networks.
pub const CONTEXT: usize = 4;

/// Dense reference of the graph convolution: explicit `A + I`, degree
/// matrix, matrix products and mean pooling, all through nalgebra.
pub fn dense_gcn(edges: &[(usize, usize)], x: &[f64], n: usize, w0: &[f64], w1: &[f64]) -> Vec<f64> {
    let mut a = DMatrix::<f64>::identity(n, n);
    for &(u, v) in edges {
        if u != v {
            a[(u, v)] += 1.0;
            a[(v, u)] += 1.0;
        }
    }
    let d_inv_sqrt = DMatrix::from_diagonal(&a.row_sum().transpose().map(|d| 1.0 / d.sqrt()));
    let p = &d_inv_sqrt * &a * &d_inv_sqrt;
    let x = DMatrix::from_row_slice(n, NODE_FEATURES, x);
    let w0 = DMatrix::from_row_slice(NODE_FEATURES, GCN_HIDDEN, w0);
    let w1 = DMatrix::from_row_slice(GCN_HIDDEN, EMBEDDING, w1);
    let h1 = (&p * x * w0).map(|v| v.max(0.0));
    let h2 = (&p * h1 * w1).map(|v| v.max(0.0));
    (0..EMBEDDING).map(|j| h2.column(j).sum() / n as f64).collect()
}

/// Random connected graph on `n` nodes: a random spanning tree plus extras.
pub fn random_graph<R: Rng>(n: usize, extra: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..extra {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            edges.push((u, v));
        }
    }
    edges
}

pub fn random_input<R: Rng>(n: usize, rng: &mut R) -> GraphInput {
    let edges = random_graph(n, n / 2, rng);
    let x: Vec<f64> = (0..n * NODE_FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ctx: Vec<f64> = (0..CONTEXT).map(|_| rng.gen_range(0.0..1.5)).collect();
    GraphInput::new(&edges, x, n, ctx)
}

/// Scalar loss used for gradient checks: policy-gradient term for one
/// action plus a squared value error.
pub fn probe_loss(net: &PolicyNet, input: &GraphInput, action: usize, adv: f64, target: f64) -> f64 {
    let f = net.forward(input);
    let m = f.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + f.logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    -(f.logits[action] - lse) * adv + 0.5 * (f.value - target).powi(2)
}

/// Analytic gradient of [`probe_loss`] through the network's backward pass.
pub fn probe_grad(net: &PolicyNet, input: &GraphInput, action: usize, adv: f64, target: f64) -> PolicyNet {
    let f = net.forward(input);
    let m = f.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = f.logits.iter().map(|l| (l - m).exp()).sum();
    let d_logits: Vec<f64> = f
        .logits
        .iter()
        .enumerate()
        .map(|(i, l)| adv * ((l - m).exp() / z - if i == action { 1.0 } else { 0.0 }))
        .collect();
    let mut g = net.zeros_like();
    net.backward(input, &f.cache, &d_logits, f.value - target, &mut g);
    g
}

/// Central finite difference of `f` with respect to parameter `(tensor, idx)`.
pub fn central_difference(
    net: &PolicyNet,
    tensor: usize,
    idx: usize,
    h: f64,
    f: impl Fn(&PolicyNet) -> f64,
) -> f64 {
    let mut plus = net.clone();
    plus.tensors_mut()[tensor][idx] += h;
    let mut minus = net.clone();
    minus.tensors_mut()[tensor][idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with an absolute floor for gradients that vanish.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error over sampled parameters of one random instance.
pub fn gradient_check<R: Rng>(hidden: &[usize], n_actions: usize, samples_per_tensor: usize, rng: &mut R) -> f64 {
    let net = PolicyNet::init(CONTEXT, hidden, n_actions, rng);
    // Larger head weights so the policy term is not negligible.
    let mut net = net;
    for w in &mut net.mlp.policy.w {
        *w *= 50.0;
    }
    let n = rng.gen_range(2..16);
    let input = random_input(n, rng);
    let action = rng.gen_range(0..n_actions);
    let adv = rng.gen_range(-2.0..2.0);
    let target = rng.gen_range(-1.0..1.0);
    let analytic = probe_grad(&net, &input, action, adv, target);
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, _, t)| t.clone()).collect();
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        for _ in 0..samples_per_tensor.min(g.len()) {
            let idx = rng.gen_range(0..g.len());
            let numeric = central_difference(&net, k, idx, 1e-5, |p| probe_loss(p, &input, action, adv, target));
            worst = worst.max(rel_error(g[idx], numeric));
        }
    }
    worst
}

/// Number of k-subsets of n by Pascal's rule, no closed form.
pub fn binomial_recursive(n: u64, k: u64) -> u64 {
    if k == 0 || k == n {
        return 1;
    }
    if k > n {
        return 0;
    }
    binomial_recursive(n - 1, k - 1) + binomial_recursive(n - 1, k)
}

/// Textbook GAE recursion written out step by step.
pub fn gae_by_hand(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    adv
}

/// Slack bus 1 feeds a 100 MW load at bus 3 through parallel lines A (0)
/// and B (1) and a detour 1-2-3 (lines 2, 3). Lossless, no charging.
pub fn parallel_case(limit_a: f64, limit_b: f64) -> Arc<GridCase> {
    let line = |id: usize, f: usize, t: usize, lim: f64| {
        serde_json::json!({"id": id, "from_bus": f, "to_bus": t, "r_pu": 0.0, "x_pu": 0.1,
            "b_charging_pu": 0.0, "thermal_limit_mva": lim})
    };
    let doc = serde_json::json!({
        "schema_version": 1, "base_mva": 100.0,
        "buses": [{"id": 1, "kind": "slack", "base_kv": 138.0},
                  {"id": 2, "kind": "pq", "base_kv": 138.0},
                  {"id": 3, "kind": "pq", "base_kv": 138.0}],
        "lines": [line(0, 1, 3, limit_a), line(1, 1, 3, limit_b), line(2, 1, 2, 500.0), line(3, 2, 3, 500.0)],
        "generators": [{"bus": 1, "p_set_mw": 100.0, "v_set_pu": 1.0, "q_min_mvar": -500.0, "q_max_mvar": 500.0}],
        "loads": [{"bus": 3, "p_mw": 100.0, "q_mvar": 0.0}]
    });
    Arc::new(GridCase::from_json(&doc.to_string()).unwrap())
}
