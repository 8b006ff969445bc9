//! Dual-policy PPO: policy switching on line loading, masked categorical
//! action selection, GAE, clipped-surrogate updates and the three-phase
//! training curriculum.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::GridCase;
use crate::env::{ActionSpace, EnvConfig, Environment, Observation};
use crate::error::TrainError;
use crate::neural::{adam_step, save_params, AdamState, GraphInput, PolicyBundle, PolicyNet};
use crate::seed;

/// Samples per gradient work unit inside a minibatch. Fixed so that the
/// reduction order, and therefore every bit of the update, does not depend
/// on the number of worker threads.
const GRAD_CHUNK: usize = 8;
/// Episodes collected concurrently per rollout batch.
const EPISODE_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    General,
    Critical,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::General => "general",
            PolicyKind::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Critical iff the maximum loading strictly exceeds the threshold.
pub fn select_policy(max_rho: f64, rho_threshold: f64) -> PolicyKind {
    if max_rho > rho_threshold {
        PolicyKind::Critical
    } else {
        PolicyKind::General
    }
}

impl PolicyBundle {
    pub fn net(&self, kind: PolicyKind) -> &PolicyNet {
        match kind {
            PolicyKind::General => &self.general,
            PolicyKind::Critical => &self.critical,
        }
    }

    fn parts_mut(&mut self, kind: PolicyKind) -> (&mut PolicyNet, &mut Option<AdamState>) {
        match kind {
            PolicyKind::General => (&mut self.general, &mut self.general_adam),
            PolicyKind::Critical => (&mut self.critical, &mut self.critical_adam),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub rollout_length: usize,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub discount_general: f64,
    pub discount_critical: f64,
    pub entropy_coef_general: f64,
    pub entropy_coef_critical: f64,
    pub learning_rate_general: f64,
    pub learning_rate_critical: f64,
}

impl Default for PpoConfig {
    /// The published hyperparameter table with its discount and entropy
    /// rows read as transposed.
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch_size: 64,
            rollout_length: 2048,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            discount_general: 0.999,
            discount_critical: 0.999,
            entropy_coef_general: 1e-3,
            entropy_coef_critical: 5e-4,
            learning_rate_general: 1e-4,
            learning_rate_critical: 1e-3,
        }
    }
}

/// Learning rate, entropy coefficient and discount of one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyHyper {
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub discount: f64,
}

impl PpoConfig {
    /// The hyperparameter table exactly as printed: entropy coefficient 0.999, discount
    /// 1e-3 (general) and 5e-4 (critical).
    pub fn hyper_table_as_printed() -> Self {
        Self {
            discount_general: 1e-3,
            discount_critical: 5e-4,
            entropy_coef_general: 0.999,
            entropy_coef_critical: 0.999,
            ..Self::default()
        }
    }

    pub fn hyper(&self, kind: PolicyKind) -> PolicyHyper {
        match kind {
            PolicyKind::General => PolicyHyper {
                learning_rate: self.learning_rate_general,
                entropy_coef: self.entropy_coef_general,
                discount: self.discount_general,
            },
            PolicyKind::Critical => PolicyHyper {
                learning_rate: self.learning_rate_critical,
                entropy_coef: self.entropy_coef_critical,
                discount: self.discount_critical,
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err("ppo.clip_epsilon must be in (0, 1)".into());
        }
        for g in [self.discount_general, self.discount_critical] {
            if !(g > 0.0 && g <= 1.0) {
                return Err("ppo discounts must be in (0, 1]".into());
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err("ppo.gae_lambda must be in [0, 1]".into());
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_length == 0 {
            return Err("ppo.epochs, minibatch_size and rollout_length must be >= 1".into());
        }
        for lr in [self.learning_rate_general, self.learning_rate_critical] {
            if !(lr > 0.0) {
                return Err("ppo learning rates must be > 0".into());
            }
        }
        if !(self.max_grad_norm > 0.0) {
            return Err("ppo.max_grad_norm must be > 0".into());
        }
        Ok(())
    }
}

/// Log-probabilities of the categorical distribution restricted to legal
/// actions; illegal entries are `-inf`. `None` when nothing is legal.
pub fn masked_log_probs(logits: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let z: f64 = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&l, _)| (l - max).exp()).sum();
    let lse = max + z.ln();
    Some(logits.iter().zip(mask).map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY }).collect())
}

/// Entropy over legal actions.
pub fn masked_entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().filter(|l| l.is_finite()).map(|&l| l.exp() * l).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub policy: PolicyKind,
}

/// Picks a legal index from masked log-probabilities: the most probable one
/// (lowest index on ties) or a draw from the distribution.
pub fn choose<R: Rng + ?Sized>(logp: &[f64], mask: &[bool], mode: ActMode, rng: &mut R) -> usize {
    match mode {
        ActMode::Greedy => {
            let mut best = None::<usize>;
            for (i, &l) in logp.iter().enumerate() {
                if mask[i] && best.map_or(true, |b| l > logp[b]) {
                    best = Some(i);
                }
            }
            best.expect("some action is legal")
        }
        ActMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last_legal = None;
            for (i, &l) in logp.iter().enumerate() {
                if !mask[i] {
                    continue;
                }
                last_legal = Some(i);
                acc += l.exp();
                if u < acc {
                    return i;
                }
            }
            // Rounding can leave the cumulative sum just below u.
            last_legal.expect("some action is legal")
        }
    }
}

/// Chooses an action with policy `kind` on a prepared network input.
/// Greedy mode takes the most probable legal action, lowest index on ties.
/// With an all-false mask the agent does nothing (log-probability 0).
pub fn act_with<R: Rng + ?Sized>(
    bundle: &PolicyBundle,
    kind: PolicyKind,
    input: &GraphInput,
    mask: &[bool],
    mode: ActMode,
    rng: &mut R,
) -> Decision {
    let net = bundle.net(kind);
    let f = net.forward(input);
    let Some(logp) = masked_log_probs(&f.logits, mask) else {
        return Decision { action: 0, log_prob: 0.0, value: f.value, policy: kind };
    };
    let action = choose(&logp, mask, mode, rng);
    Decision { action, log_prob: logp[action], value: f.value, policy: kind }
}

/// Switches on the observation's maximum loading, then acts.
pub fn act<R: Rng + ?Sized>(obs: &Observation, bundle: &PolicyBundle, mode: ActMode, rng: &mut R) -> Decision {
    let kind = select_policy(obs.max_rho, bundle.rho_threshold);
    act_with(bundle, kind, &GraphInput::from_observation(obs), &obs.legal, mode, rng)
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// GAE(λ) with a per-step discount. `dones[t]` cuts the bootstrap after
/// step `t`. Returns raw advantages and return targets (`A + V`).
pub fn compute_gae_with(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    discounts: &[f64],
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + discounts[t] * next * live - values[t];
        running = delta + discounts[t] * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    discount: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    compute_gae_with(rewards, values, dones, bootstrap, &vec![discount; rewards.len()], lambda)
}

/// Shifts and scales to mean 0, standard deviation 1 (population).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv {
        *a = (*a - mean) / std;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub input: GraphInput,
    pub mask: Vec<bool>,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub policy: PolicyKind,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchSums {
    surrogate: f64,
    value_loss: f64,
    entropy: f64,
    clipped: usize,
}

/// Gradient of the minibatch loss
/// `mean(-min(rA, clip(r)A) + value_coef (V - R)^2 - c H)` over `items`,
/// accumulated into a fresh buffer, plus the summed statistics.
fn chunk_gradient(
    net: &PolicyNet,
    items: &[&Transition],
    batch_len: usize,
    eps: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> (PolicyNet, BatchSums) {
    let mut grad = net.zeros_like();
    let mut sums = BatchSums::default();
    let b = batch_len as f64;
    for tr in items {
        let f = net.forward(&tr.input);
        let logp = masked_log_probs(&f.logits, &tr.mask).expect("stored transitions have a legal action");
        let ratio = (logp[tr.action] - tr.log_prob).exp();
        let a = tr.advantage;
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
        let surrogate = unclipped.min(clipped);
        if (ratio - 1.0).abs() > eps {
            sums.clipped += 1;
        }
        let entropy = masked_entropy(&logp);
        sums.surrogate += surrogate;
        sums.value_loss += (f.value - tr.ret).powi(2);
        sums.entropy += entropy;

        // d(-surrogate)/d log pi(a): only the unclipped branch carries gradient.
        let d_logp = if unclipped <= clipped { -unclipped } else { 0.0 };
        let d_logits: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(j, &lj)| {
                if !lj.is_finite() {
                    return 0.0;
                }
                let pj = lj.exp();
                let onehot = if j == tr.action { 1.0 } else { 0.0 };
                let d_entropy = -pj * (lj + entropy);
                (d_logp * (onehot - pj) - entropy_coef * d_entropy) / b
            })
            .collect();
        let d_value = value_coef * 2.0 * (f.value - tr.ret) / b;
        net.backward(&tr.input, &f.cache, &d_logits, d_value, &mut grad);
    }
    (grad, sums)
}

#[cfg(feature = "parallel")]
fn chunk_results(
    net: &PolicyNet,
    items: &[&Transition],
    eps: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Vec<(PolicyNet, BatchSums)> {
    use rayon::prelude::*;
    items
        .par_chunks(GRAD_CHUNK)
        .map(|c| chunk_gradient(net, c, items.len(), eps, value_coef, entropy_coef))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn chunk_results(
    net: &PolicyNet,
    items: &[&Transition],
    eps: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Vec<(PolicyNet, BatchSums)> {
    items
        .chunks(GRAD_CHUNK)
        .map(|c| chunk_gradient(net, c, items.len(), eps, value_coef, entropy_coef))
        .collect()
}

/// Runs `epochs` passes of shuffled minibatch updates over `batch`, whose
/// advantages must already be normalized. One Adam step per minibatch
/// after clipping the global gradient norm.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut PolicyNet,
    adam: &mut AdamState,
    batch: &[Transition],
    cfg: &PpoConfig,
    hyper: PolicyHyper,
    kind: PolicyKind,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    let mut stats = UpdateStats::default();
    if batch.is_empty() {
        return Ok(stats);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut samples = 0usize;
    let mut totals = BatchSums::default();
    let mut grad_norm_sum = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in order.chunks(cfg.minibatch_size) {
            let items: Vec<&Transition> = mb.iter().map(|&i| &batch[i]).collect();
            let parts = chunk_results(net, &items, cfg.clip_epsilon, cfg.value_coef, hyper.entropy_coef);
            let mut grad = net.zeros_like();
            let mut sums = BatchSums::default();
            for (g, s) in &parts {
                grad.add_scaled(g, 1.0);
                sums.surrogate += s.surrogate;
                sums.value_loss += s.value_loss;
                sums.entropy += s.entropy;
                sums.clipped += s.clipped;
            }
            let n = items.len() as f64;
            let loss = -sums.surrogate / n + cfg.value_coef * sums.value_loss / n - hyper.entropy_coef * sums.entropy / n;
            let norm = grad.norm();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    policy: kind.as_str(),
                    surrogate: sums.surrogate / n,
                    value_loss: sums.value_loss / n,
                    entropy: sums.entropy / n,
                });
            }
            if norm > cfg.max_grad_norm {
                let scale = cfg.max_grad_norm / norm;
                let snapshot = grad.clone();
                grad.add_scaled(&snapshot, scale - 1.0);
            }
            adam_step(net, &grad, adam, hyper.learning_rate);
            totals.surrogate += sums.surrogate;
            totals.value_loss += sums.value_loss;
            totals.entropy += sums.entropy;
            totals.clipped += sums.clipped;
            samples += items.len();
            grad_norm_sum += norm;
            stats.minibatches += 1;
        }
    }
    let n = samples as f64;
    stats.surrogate = totals.surrogate / n;
    stats.value_loss = totals.value_loss / n;
    stats.entropy = totals.entropy / n;
    stats.clip_fraction = totals.clipped as f64 / n;
    stats.grad_norm = grad_norm_sum / stats.minibatches as f64;
    Ok(stats)
}

/// Which policy acts during a training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    Only(PolicyKind),
    /// Switch on loading; each transition goes to the policy that acted.
    Switch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Phase 1: general policy on benign episodes.
    pub general_steps: u64,
    /// Phase 2: critical policy on hostile episodes.
    pub critical_steps: u64,
    /// Phase 3: both policies with switching on hostile episodes.
    pub mixed_steps: u64,
    /// Hostile episodes start with `k` uniformly drawn from `0..=max` lines out.
    pub max_initial_outages: usize,
    pub eval_every_updates: u64,
    pub eval_episodes: usize,
    /// 0 disables periodic checkpoints (the final one is still written).
    pub checkpoint_every_updates: u64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            general_steps: 10_000,
            critical_steps: 150_000,
            mixed_steps: 150_000,
            max_initial_outages: 5,
            eval_every_updates: 10,
            eval_episodes: 20,
            checkpoint_every_updates: 50,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn total_steps(&self) -> u64 {
        self.general_steps + self.critical_steps + self.mixed_steps
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub update: u64,
    pub phase: String,
    pub policy: PolicyKind,
    pub env_steps: u64,
    pub episodes: usize,
    pub transitions: usize,
    pub mean_episode_reward: f64,
    pub mean_episode_length: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Greedy dual-policy survival on hostile evaluation episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_survival: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_reward: Option<f64>,
}

/// Everything training needs besides the bundle.
#[derive(Clone)]
pub struct TrainSetup {
    pub case: Arc<GridCase>,
    pub actions: Arc<ActionSpace>,
    pub benign: EnvConfig,
    pub hostile: EnvConfig,
    pub ppo: PpoConfig,
    pub schedule: TrainSchedule,
    pub checkpoint_dir: Option<PathBuf>,
}

struct Episode {
    transitions: Vec<Transition>,
    reward: f64,
    length: usize,
}

fn draw_outage(rng: &mut ChaCha8Rng, n_lines: usize, max_k: usize) -> Vec<usize> {
    let k = rng.gen_range(0..=max_k.min(n_lines));
    let mut lines: Vec<usize> = (0..n_lines).collect();
    lines.shuffle(rng);
    let mut out = lines[..k].to_vec();
    out.sort_unstable();
    out
}

/// Resets with random outages until the start is feasible.
fn reset_random(env: &mut Environment, rng: &mut ChaCha8Rng, max_k: usize) -> Observation {
    let n = env.case().n_lines();
    loop {
        let outage = draw_outage(rng, n, max_k);
        if let Ok(obs) = env.reset(&outage) {
            return obs;
        }
    }
}

fn run_training_episode(
    setup: &TrainSetup,
    bundle: &PolicyBundle,
    cfg: &EnvConfig,
    routing: Routing,
    max_k: usize,
    episode_seed: u64,
) -> Episode {
    let mut env_cfg = cfg.clone();
    env_cfg.chronics_seed = episode_seed;
    let mut env = Environment::with_actions(setup.case.clone(), setup.actions.clone(), env_cfg)
        .expect("validated configuration");
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[episode_seed, 1]));
    let mut obs = reset_random(&mut env, &mut rng, max_k);
    let mut transitions = Vec::new();
    let mut discounts = Vec::new();
    let mut total = 0.0;
    loop {
        let kind = match routing {
            Routing::Only(k) => k,
            Routing::Switch => select_policy(obs.max_rho, bundle.rho_threshold),
        };
        let input = GraphInput::from_observation(&obs);
        let d = act_with(bundle, kind, &input, &obs.legal, ActMode::Sample, &mut rng);
        let r = env.step(d.action).expect("episode is alive");
        let reward = r.reward.total();
        total += reward;
        discounts.push(setup.ppo.hyper(kind).discount);
        transitions.push(Transition {
            input,
            mask: obs.legal,
            action: d.action,
            log_prob: d.log_prob,
            value: d.value,
            reward,
            done: r.done,
            policy: kind,
            advantage: 0.0,
            ret: 0.0,
        });
        if r.done {
            break;
        }
        obs = r.observation;
    }
    let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = transitions.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = transitions.iter().map(|t| t.done).collect();
    let (adv, ret) = compute_gae_with(&rewards, &values, &dones, 0.0, &discounts, setup.ppo.gae_lambda);
    for (t, (a, r)) in transitions.iter_mut().zip(adv.into_iter().zip(ret)) {
        t.advantage = a;
        t.ret = r;
    }
    let length = transitions.len();
    Episode { transitions, reward: total, length }
}

#[cfg(feature = "parallel")]
fn run_batch<T: Send, F: Fn(u64) -> T + Sync>(seeds: &[u64], f: F) -> Vec<T> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_batch<T, F: Fn(u64) -> T>(seeds: &[u64], f: F) -> Vec<T> {
    seeds.iter().map(|&s| f(s)).collect()
}

/// Greedy dual-policy evaluation on fixed hostile episodes: mean steps
/// survived and mean episode reward.
pub fn evaluate(setup: &TrainSetup, bundle: &PolicyBundle, episodes: usize, seed: u64) -> (f64, f64) {
    if episodes == 0 {
        return (0.0, 0.0);
    }
    let seeds: Vec<u64> = (0..episodes as u64).map(|i| seed::derive(&[seed, 0xe7a1, i])).collect();
    let max_k = setup.schedule.max_initial_outages;
    let results = run_batch(&seeds, |s| {
        let mut cfg = setup.hostile.clone();
        cfg.chronics_seed = s;
        let mut env = Environment::with_actions(setup.case.clone(), setup.actions.clone(), cfg)
            .expect("validated configuration");
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut obs = reset_random(&mut env, &mut rng, max_k);
        let mut survived = 0usize;
        let mut reward = 0.0;
        loop {
            let d = act(&obs, bundle, ActMode::Greedy, &mut rng);
            let r = env.step(d.action).expect("episode is alive");
            reward += r.reward.total();
            if r.info.failure.is_blackout() {
                break;
            }
            survived += 1;
            if r.done {
                break;
            }
            obs = r.observation;
        }
        (survived as f64, reward)
    });
    let n = results.len() as f64;
    (results.iter().map(|r| r.0).sum::<f64>() / n, results.iter().map(|r| r.1).sum::<f64>() / n)
}

struct Phase {
    name: &'static str,
    steps: u64,
    routing: Routing,
    hostile: bool,
}

/// Runs the curriculum, calling `log` for every update record (in order)
/// and writing checkpoints if a directory is configured. The log is a pure
/// function of the setup, the initial bundle and the seeds.
pub fn train(
    setup: &TrainSetup,
    bundle: &mut PolicyBundle,
    log: &mut dyn FnMut(&TrainLogRecord) -> std::io::Result<()>,
) -> Result<Vec<TrainLogRecord>, TrainError> {
    setup.ppo.validate().map_err(TrainError::Config)?;
    let n_lines = setup.case.n_lines();
    setup.benign.validate(n_lines)?;
    setup.hostile.validate(n_lines)?;
    if bundle.n_actions() != setup.actions.len() {
        return Err(TrainError::Config(format!(
            "bundle has {} action logits, action space has {}",
            bundle.n_actions(),
            setup.actions.len()
        )));
    }
    let sched = &setup.schedule;
    let phases = [
        Phase { name: "general", steps: sched.general_steps, routing: Routing::Only(PolicyKind::General), hostile: false },
        Phase { name: "critical", steps: sched.critical_steps, routing: Routing::Only(PolicyKind::Critical), hostile: true },
        Phase { name: "mixed", steps: sched.mixed_steps, routing: Routing::Switch, hostile: true },
    ];
    if bundle.general_adam.is_none() {
        bundle.general_adam = Some(AdamState::new(&bundle.general));
    }
    if bundle.critical_adam.is_none() {
        bundle.critical_adam = Some(AdamState::new(&bundle.critical));
    }
    bundle.metadata.seed = sched.seed;
    let mut records = Vec::new();
    let mut update = bundle.metadata.updates;
    let mut env_steps = bundle.metadata.env_steps;
    let mut episode_counter = 0u64;
    for (pi, phase) in phases.iter().enumerate() {
        let cfg = if phase.hostile { &setup.hostile } else { &setup.benign };
        let max_k = if phase.hostile { sched.max_initial_outages } else { 0 };
        let mut phase_steps = 0u64;
        while phase_steps < phase.steps {
            let mut episodes = Vec::new();
            let mut collected = 0usize;
            while collected < setup.ppo.rollout_length {
                let seeds: Vec<u64> = (0..EPISODE_BATCH as u64)
                    .map(|i| seed::derive(&[sched.seed, pi as u64, episode_counter + i]))
                    .collect();
                episode_counter += EPISODE_BATCH as u64;
                let batch = run_batch(&seeds, |s| run_training_episode(setup, bundle, cfg, phase.routing, max_k, s));
                for ep in batch {
                    collected += ep.length;
                    episodes.push(ep);
                }
            }
            phase_steps += collected as u64;
            env_steps += collected as u64;
            update += 1;
            let mean_reward = episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len() as f64;
            let mean_len = episodes.iter().map(|e| e.length as f64).sum::<f64>() / episodes.len() as f64;
            let n_episodes = episodes.len();
            let mut buffers: [(PolicyKind, Vec<Transition>); 2] =
                [(PolicyKind::General, Vec::new()), (PolicyKind::Critical, Vec::new())];
            for ep in episodes {
                for tr in ep.transitions {
                    let slot = usize::from(tr.policy == PolicyKind::Critical);
                    buffers[slot].1.push(tr);
                }
            }
            let evaluate_now = sched.eval_every_updates > 0 && update % sched.eval_every_updates == 0;
            let mut pending = Vec::new();
            for (kind, mut buf) in buffers {
                if buf.is_empty() {
                    continue;
                }
                let mut adv: Vec<f64> = buf.iter().map(|t| t.advantage).collect();
                normalize_advantages(&mut adv);
                for (t, a) in buf.iter_mut().zip(adv) {
                    t.advantage = a;
                }
                let hyper = setup.ppo.hyper(kind);
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[sched.seed, 0x5ade, update, kind as u64]));
                let (net, adam) = bundle.parts_mut(kind);
                let adam = adam.as_mut().expect("initialised above");
                let stats = ppo_update(net, adam, &buf, &setup.ppo, hyper, kind, &mut rng)?;
                pending.push(TrainLogRecord {
                    update,
                    phase: phase.name.to_string(),
                    policy: kind,
                    env_steps,
                    episodes: n_episodes,
                    transitions: buf.len(),
                    mean_episode_reward: mean_reward,
                    mean_episode_length: mean_len,
                    surrogate: stats.surrogate,
                    value_loss: stats.value_loss,
                    entropy: stats.entropy,
                    clip_fraction: stats.clip_fraction,
                    grad_norm: stats.grad_norm,
                    eval_survival: None,
                    eval_reward: None,
                });
            }
            bundle.metadata.updates = update;
            bundle.metadata.env_steps = env_steps;
            bundle.metadata.phase = phase.name.to_string();
            if evaluate_now {
                let (survival, reward) = evaluate(setup, bundle, sched.eval_episodes, sched.seed);
                if let Some(last) = pending.last_mut() {
                    last.eval_survival = Some(survival);
                    last.eval_reward = Some(reward);
                }
            }
            for rec in pending {
                log(&rec).map_err(TrainError::Io)?;
                records.push(rec);
            }
            if let Some(dir) = &setup.checkpoint_dir {
                if sched.checkpoint_every_updates > 0 && update % sched.checkpoint_every_updates == 0 {
                    save_params(bundle, checkpoint_path(dir, update))?;
                }
            }
        }
    }
    if let Some(dir) = &setup.checkpoint_dir {
        save_params(bundle, dir.join("final.json"))?;
    }
    Ok(records)
}

pub fn checkpoint_path(dir: &Path, update: u64) -> PathBuf {
    dir.join(format!("checkpoint_{update:06}.json"))
}
