//! Graph convolutional feature extractor, MLP policy/value heads, exact
//! reverse-mode gradients for this fixed architecture, Adam, and JSON
//! checkpoints.
//!
//! All matrices are flat row-major `Vec<f64>`. A forward pass records a
//! [`Cache`]; [`PolicyNet::backward`] consumes it together with the loss
//! gradients at the two heads.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, NODE_FEATURES};
use crate::error::CheckpointError;

pub const GCN_HIDDEN: usize = 64;
pub const EMBEDDING: usize = 128;
pub const GENERAL_HIDDEN: [usize; 2] = [256, 128];
pub const CRITICAL_HIDDEN: [usize; 2] = [512, 256];
pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// `c[m x n] += a[m x k] * b[k x n]`.
fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (cj, bj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cj += x * bj;
            }
        }
    }
}

/// `c[k x n] += a[m x k]^T * b[m x n]`.
fn matmul_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let row = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *cj += x * bj;
            }
        }
    }
}

/// `c[m x k] += a[m x n] * b[k x n]^T`.
fn matmul_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            c[i * k + p] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// `D^-1/2 (A + I) D^-1/2` as a dense `n x n` matrix. Parallel edges add up;
/// self-loop edges are ignored (every node already has one).
pub fn normalize_adjacency(edges: &[(usize, usize)], n: usize) -> Vec<f64> {
    assert!(n >= 1, "graph needs at least one node");
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        if u != v {
            a[u * n + v] += 1.0;
            a[v * n + u] += 1.0;
        }
    }
    let scale: Vec<f64> = (0..n)
        .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= scale[i] * scale[j];
        }
    }
    a
}

/// Network input derived from an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub n_nodes: usize,
    /// Normalized propagation matrix, `n x n`.
    pub adjacency: Vec<f64>,
    /// Node features, `n x NODE_FEATURES`.
    pub features: Vec<f64>,
    /// Non-graph scalars appended to the pooled embedding.
    pub context: Vec<f64>,
}

impl GraphInput {
    pub fn new(edges: &[(usize, usize)], features: Vec<f64>, n_nodes: usize, context: Vec<f64>) -> Self {
        assert_eq!(features.len(), n_nodes * NODE_FEATURES, "one feature row per node");
        Self { n_nodes, adjacency: normalize_adjacency(edges, n_nodes), features, context }
    }

    pub fn from_observation(obs: &Observation) -> Self {
        Self::new(&obs.edge_index, obs.node_features.clone(), obs.n_nodes, obs.context())
    }
}

/// Fully connected layer `y = x W + b`, `W` is `n_in x n_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    /// Uniform Glorot initialisation scaled by `gain`, zero bias.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, gain: f64, rng: &mut R) -> Self {
        let mut d = Self::zeros(n_in, n_out);
        let bound = gain * (6.0 / (n_in + n_out) as f64).sqrt();
        for w in &mut d.w {
            *w = rng.gen_range(-bound..bound);
        }
        d
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        matmul_acc(x, &self.w, &mut y, 1, self.n_in, self.n_out);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        matmul_at_b_acc(x, dy, &mut grad.w, 1, self.n_in, self.n_out);
        for (g, d) in grad.b.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.n_in];
        matmul_a_bt_acc(dy, &self.w, &mut dx, 1, self.n_out, self.n_in);
        dx
    }
}

/// Two-layer graph convolution without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    /// `NODE_FEATURES x GCN_HIDDEN`.
    pub w0: Vec<f64>,
    /// `GCN_HIDDEN x EMBEDDING`.
    pub w1: Vec<f64>,
}

impl GcnParams {
    pub fn zeros() -> Self {
        Self { w0: vec![0.0; NODE_FEATURES * GCN_HIDDEN], w1: vec![0.0; GCN_HIDDEN * EMBEDDING] }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            w0: Dense::init(NODE_FEATURES, GCN_HIDDEN, 1.0, rng).w,
            w1: Dense::init(GCN_HIDDEN, EMBEDDING, 1.0, rng).w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct GcnCache {
    n: usize,
    ax: Vec<f64>,
    z1: Vec<f64>,
    ah1: Vec<f64>,
    z2: Vec<f64>,
}

fn gcn_forward_cached(input: &GraphInput, p: &GcnParams) -> (Vec<f64>, GcnCache) {
    let n = input.n_nodes;
    let a = &input.adjacency;
    let mut ax = vec![0.0; n * NODE_FEATURES];
    matmul_acc(a, &input.features, &mut ax, n, n, NODE_FEATURES);
    let mut z1 = vec![0.0; n * GCN_HIDDEN];
    matmul_acc(&ax, &p.w0, &mut z1, n, NODE_FEATURES, GCN_HIDDEN);
    let h1 = relu(&z1);
    let mut ah1 = vec![0.0; n * GCN_HIDDEN];
    matmul_acc(a, &h1, &mut ah1, n, n, GCN_HIDDEN);
    let mut z2 = vec![0.0; n * EMBEDDING];
    matmul_acc(&ah1, &p.w1, &mut z2, n, GCN_HIDDEN, EMBEDDING);
    let mut pooled = vec![0.0; EMBEDDING];
    for row in z2.chunks_exact(EMBEDDING) {
        for (g, &z) in pooled.iter_mut().zip(row) {
            *g += z.max(0.0);
        }
    }
    for g in &mut pooled {
        *g /= n as f64;
    }
    (pooled, GcnCache { n, ax, z1, ah1, z2 })
}

/// Two propagation layers with ReLU, mean-pooled to an `EMBEDDING` vector.
pub fn gcn_forward(input: &GraphInput, params: &GcnParams) -> Vec<f64> {
    gcn_forward_cached(input, params).0
}

fn gcn_backward(input: &GraphInput, p: &GcnParams, c: &GcnCache, d_pooled: &[f64], grad: &mut GcnParams) {
    let n = c.n;
    let a = &input.adjacency;
    let mut dz2 = vec![0.0; n * EMBEDDING];
    for (i, row) in dz2.chunks_exact_mut(EMBEDDING).enumerate() {
        for j in 0..EMBEDDING {
            if c.z2[i * EMBEDDING + j] > 0.0 {
                row[j] = d_pooled[j] / n as f64;
            }
        }
    }
    matmul_at_b_acc(&c.ah1, &dz2, &mut grad.w1, n, GCN_HIDDEN, EMBEDDING);
    let mut d_ah1 = vec![0.0; n * GCN_HIDDEN];
    matmul_a_bt_acc(&dz2, &p.w1, &mut d_ah1, n, EMBEDDING, GCN_HIDDEN);
    // The propagation matrix is symmetric, so A^T dY = A dY.
    let mut dz1 = vec![0.0; n * GCN_HIDDEN];
    matmul_acc(a, &d_ah1, &mut dz1, n, n, GCN_HIDDEN);
    for (d, &z) in dz1.iter_mut().zip(&c.z1) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
    matmul_at_b_acc(&c.ax, &dz1, &mut grad.w0, n, NODE_FEATURES, GCN_HIDDEN);
}

/// Hidden trunk with ReLU plus linear policy and value heads. The trunk
/// input is the graph embedding followed by the observation context.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Vec<Dense>,
    pub policy: Dense,
    pub value: Dense,
}

impl MlpParams {
    pub fn zeros(n_context: usize, hidden: &[usize], n_actions: usize) -> Self {
        let mut layers = Vec::new();
        let mut width = EMBEDDING + n_context;
        for &h in hidden {
            layers.push(Dense::zeros(width, h));
            width = h;
        }
        Self { hidden: layers, policy: Dense::zeros(width, n_actions), value: Dense::zeros(width, 1) }
    }

    /// ReLU-gain hidden layers, a small policy head (near-uniform initial
    /// policy) and a unit-gain value head.
    pub fn init<R: Rng + ?Sized>(n_context: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut width = EMBEDDING + n_context;
        for &h in hidden {
            layers.push(Dense::init(width, h, std::f64::consts::SQRT_2, rng));
            width = h;
        }
        Self {
            hidden: layers,
            policy: Dense::init(width, n_actions, 0.01, rng),
            value: Dense::init(width, 1, 1.0, rng),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.policy.n_out
    }

    pub fn n_context(&self) -> usize {
        self.hidden.first().unwrap_or(&self.policy).n_in - EMBEDDING
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.iter().map(|d| d.n_out).collect()
    }
}

/// Activations of one MLP forward pass: `acts[0]` is the input, `acts[k]`
/// the output of hidden layer `k`.
#[derive(Debug, Clone, PartialEq)]
struct MlpCache {
    acts: Vec<Vec<f64>>,
}

fn mlp_forward_cached(x: &[f64], p: &MlpParams) -> (Vec<f64>, f64, MlpCache) {
    let mut acts = vec![x.to_vec()];
    for layer in &p.hidden {
        let z = layer.forward(acts.last().expect("input present"));
        acts.push(relu(&z));
    }
    let top = acts.last().expect("input present");
    let logits = p.policy.forward(top);
    let value = p.value.forward(top)[0];
    (logits, value, MlpCache { acts })
}

/// Action logits and state value for a trunk input.
pub fn mlp_forward(x: &[f64], params: &MlpParams) -> (Vec<f64>, f64) {
    let (l, v, _) = mlp_forward_cached(x, params);
    (l, v)
}

fn mlp_backward(p: &MlpParams, c: &MlpCache, d_logits: &[f64], d_value: f64, grad: &mut MlpParams) -> Vec<f64> {
    let top = c.acts.last().expect("input present");
    let mut dh = p.policy.backward(top, d_logits, &mut grad.policy);
    let dv = p.value.backward(top, &[d_value], &mut grad.value);
    for (a, b) in dh.iter_mut().zip(&dv) {
        *a += b;
    }
    for k in (0..p.hidden.len()).rev() {
        // acts[k + 1] = relu(z); its positivity is the ReLU mask.
        for (d, &h) in dh.iter_mut().zip(&c.acts[k + 1]) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        dh = p.hidden[k].backward(&c.acts[k], &dh, &mut grad.hidden[k]);
    }
    dh
}

/// One policy: its own graph extractor plus MLP heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub gcn: GcnParams,
    pub mlp: MlpParams,
}

/// Recorded forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    gcn: GcnCache,
    mlp: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub value: f64,
    pub cache: Cache,
}

impl PolicyNet {
    pub fn init<R: Rng + ?Sized>(n_context: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Self {
        Self { gcn: GcnParams::init(rng), mlp: MlpParams::init(n_context, hidden, n_actions, rng) }
    }

    /// Same shapes, all zeros; used for gradient buffers and Adam moments.
    pub fn zeros_like(&self) -> Self {
        Self {
            gcn: GcnParams::zeros(),
            mlp: MlpParams::zeros(self.mlp.n_context(), &self.mlp.hidden_sizes(), self.mlp.n_actions()),
        }
    }

    pub fn embed(&self, input: &GraphInput) -> Vec<f64> {
        let mut x = gcn_forward(input, &self.gcn);
        x.extend_from_slice(&input.context);
        x
    }

    pub fn forward(&self, input: &GraphInput) -> Forward {
        let (mut x, gcn) = gcn_forward_cached(input, &self.gcn);
        x.extend_from_slice(&input.context);
        let (logits, value, mlp) = mlp_forward_cached(&x, &self.mlp);
        Forward { logits, value, cache: Cache { gcn, mlp } }
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/dlogits` and `dL/dvalue`.
    pub fn backward(&self, input: &GraphInput, cache: &Cache, d_logits: &[f64], d_value: f64, grad: &mut PolicyNet) {
        let dx = mlp_backward(&self.mlp, &cache.mlp, d_logits, d_value, &mut grad.mlp);
        gcn_backward(input, &self.gcn, &cache.gcn, &dx[..EMBEDDING], &mut grad.gcn);
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, [usize; 2], &Vec<f64>)> {
        let mut out = vec![
            ("gcn.w0".to_string(), [NODE_FEATURES, GCN_HIDDEN], &self.gcn.w0),
            ("gcn.w1".to_string(), [GCN_HIDDEN, EMBEDDING], &self.gcn.w1),
        ];
        for (k, d) in self.mlp.hidden.iter().enumerate() {
            out.push((format!("mlp.hidden{k}.w"), [d.n_in, d.n_out], &d.w));
            out.push((format!("mlp.hidden{k}.b"), [1, d.n_out], &d.b));
        }
        out.push(("mlp.policy.w".into(), [self.mlp.policy.n_in, self.mlp.policy.n_out], &self.mlp.policy.w));
        out.push(("mlp.policy.b".into(), [1, self.mlp.policy.n_out], &self.mlp.policy.b));
        out.push(("mlp.value.w".into(), [self.mlp.value.n_in, 1], &self.mlp.value.w));
        out.push(("mlp.value.b".into(), [1, 1], &self.mlp.value.b));
        out
    }

    /// Mutable views of every tensor, same order as [`PolicyNet::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.gcn.w0, &mut self.gcn.w1];
        for d in &mut self.mlp.hidden {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out.push(&mut self.mlp.policy.w);
        out.push(&mut self.mlp.policy.b);
        out.push(&mut self.mlp.value.w);
        out.push(&mut self.mlp.value.b);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = value);
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &PolicyNet, scale: f64) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, _, t)| t.clone()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(&src) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, _, t)| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Adam moments for one [`PolicyNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: PolicyNet,
    pub v: PolicyNet,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &PolicyNet) -> Self {
        Self { m: net.zeros_like(), v: net.zeros_like(), t: 0 }
    }
}

/// One bias-corrected Adam step (beta1 0.9, beta2 0.999, eps 1e-8).
pub fn adam_step(params: &mut PolicyNet, grads: &PolicyNet, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let g: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, _, t)| t.clone()).collect();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&g).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Both policies of the dual-policy agent plus the switching threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub general: PolicyNet,
    pub critical: PolicyNet,
    pub rho_threshold: f64,
    pub general_adam: Option<AdamState>,
    pub critical_adam: Option<AdamState>,
    pub metadata: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    pub env_steps: u64,
    pub updates: u64,
    pub seed: u64,
    pub phase: String,
}

impl PolicyBundle {
    pub fn init<R: Rng + ?Sized>(n_context: usize, n_actions: usize, rho_threshold: f64, rng: &mut R) -> Self {
        let general = PolicyNet::init(n_context, &GENERAL_HIDDEN, n_actions, rng);
        let critical = PolicyNet::init(n_context, &CRITICAL_HIDDEN, n_actions, rng);
        Self {
            general_adam: Some(AdamState::new(&general)),
            critical_adam: Some(AdamState::new(&critical)),
            general,
            critical,
            rho_threshold,
            metadata: CheckpointMeta::default(),
        }
    }

    /// Fresh bundle drawn from a ChaCha stream seeded with `seed`, with the
    /// metadata seed recorded.
    pub fn seeded(n_context: usize, n_actions: usize, rho_threshold: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::seed::derive(&[seed, 0x1417]));
        let mut bundle = Self::init(n_context, n_actions, rho_threshold, &mut rng);
        bundle.metadata.seed = seed;
        bundle
    }

    pub fn n_actions(&self) -> usize {
        self.general.mlp.n_actions()
    }

    pub fn n_context(&self) -> usize {
        self.general.mlp.n_context()
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile::from_bundle(self);
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(CheckpointError::Parse)?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found, expected: CHECKPOINT_VERSION });
        }
        let file: CheckpointFile = serde_json::from_value(value).map_err(CheckpointError::Parse)?;
        file.into_bundle()
    }
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_params(bundle: &PolicyBundle, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bundle.to_json()).map_err(CheckpointError::Io)?;
    std::fs::rename(&tmp, path).map_err(CheckpointError::Io)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<PolicyBundle, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(CheckpointError::Io)?;
    PolicyBundle::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    node_features: usize,
    gcn_hidden: usize,
    embedding: usize,
    context: usize,
    n_actions: usize,
    general_hidden: Vec<usize>,
    critical_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamFile {
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    schema_version: u32,
    architecture: Architecture,
    rho_threshold: f64,
    metadata: CheckpointMeta,
    general: BTreeMap<String, Tensor>,
    critical: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    general_adam: Option<AdamFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    critical_adam: Option<AdamFile>,
}

fn dump(net: &PolicyNet) -> BTreeMap<String, Tensor> {
    net.tensors().into_iter().map(|(name, shape, data)| (name, Tensor { shape, data: data.clone() })).collect()
}

fn restore(template: &mut PolicyNet, which: &str, mut tensors: BTreeMap<String, Tensor>) -> Result<(), CheckpointError> {
    let names: Vec<(String, [usize; 2])> = template.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if tensors.len() != names.len() {
        return Err(CheckpointError::Shape {
            name: which.to_string(),
            reason: format!("expected {} tensors, found {}", names.len(), tensors.len()),
        });
    }
    for ((name, shape), dst) in names.into_iter().zip(template.tensors_mut()) {
        let full = format!("{which}.{name}");
        let t = tensors
            .remove(&name)
            .ok_or_else(|| CheckpointError::Shape { name: full.clone(), reason: "missing".into() })?;
        if t.shape != shape || t.data.len() != shape[0] * shape[1] {
            return Err(CheckpointError::Shape {
                name: full,
                reason: format!("expected {shape:?}, found {:?} with {} values", t.shape, t.data.len()),
            });
        }
        *dst = t.data;
    }
    Ok(())
}

impl CheckpointFile {
    fn from_bundle(b: &PolicyBundle) -> Self {
        let adam = |s: &Option<AdamState>| {
            s.as_ref().map(|s| AdamFile { t: s.t, m: dump(&s.m), v: dump(&s.v) })
        };
        Self {
            schema_version: CHECKPOINT_VERSION,
            architecture: Architecture {
                node_features: NODE_FEATURES,
                gcn_hidden: GCN_HIDDEN,
                embedding: EMBEDDING,
                context: b.n_context(),
                n_actions: b.n_actions(),
                general_hidden: b.general.mlp.hidden_sizes(),
                critical_hidden: b.critical.mlp.hidden_sizes(),
            },
            rho_threshold: b.rho_threshold,
            metadata: b.metadata.clone(),
            general: dump(&b.general),
            critical: dump(&b.critical),
            general_adam: adam(&b.general_adam),
            critical_adam: adam(&b.critical_adam),
        }
    }

    fn into_bundle(self) -> Result<PolicyBundle, CheckpointError> {
        let arch = &self.architecture;
        if arch.node_features != NODE_FEATURES
            || arch.gcn_hidden != GCN_HIDDEN
            || arch.embedding != EMBEDDING
        {
            return Err(CheckpointError::Shape {
                name: "architecture".into(),
                reason: format!("unsupported extractor dimensions {arch:?}"),
            });
        }
        let blank = |hidden: &[usize]| MlpParams::zeros(arch.context, hidden, arch.n_actions);
        let mut general = PolicyNet { gcn: GcnParams::zeros(), mlp: blank(&arch.general_hidden) };
        let mut critical = PolicyNet { gcn: GcnParams::zeros(), mlp: blank(&arch.critical_hidden) };
        restore(&mut general, "general", self.general)?;
        restore(&mut critical, "critical", self.critical)?;
        let adam = |file: Option<AdamFile>, net: &PolicyNet, which: &str| -> Result<Option<AdamState>, CheckpointError> {
            let Some(f) = file else { return Ok(None) };
            let mut s = AdamState::new(net);
            restore(&mut s.m, &format!("{which}_adam.m"), f.m)?;
            restore(&mut s.v, &format!("{which}_adam.v"), f.v)?;
            s.t = f.t;
            Ok(Some(s))
        };
        let general_adam = adam(self.general_adam, &general, "general")?;
        let critical_adam = adam(self.critical_adam, &critical, "critical")?;
        Ok(PolicyBundle {
            general,
            critical,
            rho_threshold: self.rho_threshold,
            general_adam,
            critical_adam,
            metadata: self.metadata,
        })
    }
}
