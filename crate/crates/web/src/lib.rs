//! WebAssembly bindings for the static demo page in `www/`. Every call
//! returns a JSON string so the page needs nothing beyond `JSON.parse`.

use std::sync::Arc;

use gridguard::case::{bundled_ieee14, GridCase, Topology};
use gridguard::chronics::chronics_at;
use gridguard::env::{EnvConfig, TraceRecord};
use gridguard::neural::PolicyBundle;
use gridguard::powerflow::{solve_with, Injections, SolveOptions, Start};
use gridguard::screening::{enumerate_contingencies, episode_seed, run_set, run_set_traced, ScreenContext};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct LineView {
    id: usize,
    from_bus: usize,
    to_bus: usize,
    in_service: bool,
    rho: f64,
}

#[derive(Serialize)]
struct FlowView {
    converged: bool,
    error: Option<String>,
    iterations: usize,
    max_rho: f64,
    lines: Vec<LineView>,
}

#[derive(Serialize)]
struct EpisodeView {
    steps_survived: usize,
    cum_reward: f64,
    total_cascades: usize,
    failure_cause: &'static str,
    steps: Vec<TraceRecord>,
}

#[derive(Serialize)]
struct HistogramView {
    k: usize,
    n_sets: usize,
    mean_survival: f64,
    /// `counts[i]` sets survived between `10 i` and `10 i + 9` steps; the last
    /// bin also holds full-length episodes.
    counts: Vec<usize>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("view types serialise")
}

fn err(msg: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&msg.to_string())
}

/// One demo session: the bundled 14-bus case plus an optional policy.
#[wasm_bindgen]
pub struct Demo {
    case: Arc<GridCase>,
    env: EnvConfig,
    agent: Option<PolicyBundle>,
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo { case: Arc::new(bundled_ieee14()), env: EnvConfig::hostile(), agent: None }
    }

    /// Lines as `[{id, from_bus, to_bus}]`.
    pub fn lines(&self) -> String {
        let lines: Vec<_> = self
            .case
            .lines
            .iter()
            .map(|l| serde_json::json!({"id": l.id, "from_bus": l.from_bus, "to_bus": l.to_bus}))
            .collect();
        to_json(&lines)
    }

    pub fn set_load_scale(&mut self, scale: f64) {
        self.env.load_scale = scale;
    }

    pub fn set_opponent(&mut self, enabled: bool, tau_attack: usize) {
        self.env.opponent_enabled = enabled;
        self.env.opponent.tau_attack = tau_attack.max(1);
    }

    /// Loads a training checkpoint (the JSON written by `gridguard train`).
    pub fn load_agent(&mut self, checkpoint_json: &str) -> Result<(), JsValue> {
        let bundle = PolicyBundle::from_json(checkpoint_json).map_err(err)?;
        let n_actions = gridguard::env::ActionSpace::new(&self.case).len();
        if bundle.n_actions() != n_actions {
            return Err(err(format!("checkpoint has {} actions, case has {n_actions}", bundle.n_actions())));
        }
        self.agent = Some(bundle);
        Ok(())
    }

    pub fn clear_agent(&mut self) {
        self.agent = None;
    }

    pub fn has_agent(&self) -> bool {
        self.agent.is_some()
    }

    /// Line loadings at step `t` of the chronics with `outages` open.
    pub fn power_flow(&self, outages: &[u32], t: usize, seed: u64) -> Result<String, JsValue> {
        let mut topo = Topology::nominal(&self.case);
        for &l in outages {
            let l = l as usize;
            if l >= self.case.n_lines() {
                return Err(err(format!("line {l} out of range")));
            }
            topo.line_status[l] = false;
        }
        let m = chronics_at(&self.case, seed, t, self.env.load_scale, self.env.chronics_noise);
        let inj = Injections::scaled(&self.case, &m.load, &m.gen);
        let opts = SolveOptions { enforce_q_limits: self.env.enforce_q_limits };
        let view = match solve_with(&self.case, &topo, &inj, Start::Flat, opts) {
            Ok(sol) => FlowView {
                converged: true,
                error: None,
                iterations: sol.iterations,
                max_rho: sol.max_rho(),
                lines: self
                    .case
                    .lines
                    .iter()
                    .enumerate()
                    .map(|(i, l)| LineView {
                        id: l.id,
                        from_bus: l.from_bus,
                        to_bus: l.to_bus,
                        in_service: topo.line_status[i],
                        rho: sol.rho[i],
                    })
                    .collect(),
            },
            Err(e) => FlowView { converged: false, error: Some(e.to_string()), iterations: 0, max_rho: 0.0, lines: Vec::new() },
        };
        Ok(to_json(&view))
    }

    /// One episode with `outages` out throughout, using the loaded agent if
    /// `use_agent` and one is present, otherwise doing nothing.
    pub fn run_episode(&self, outages: &[u32], seed: u64, use_agent: bool) -> Result<String, JsValue> {
        let mut set: Vec<usize> = outages.iter().map(|&l| l as usize).collect();
        set.sort_unstable();
        set.dedup();
        let ctx = ScreenContext::new(self.case.clone(), self.env.clone());
        let agent = if use_agent { self.agent.as_ref() } else { None };
        let (r, steps) = run_set_traced(&ctx, agent, set.len(), 0, &set, seed, true).map_err(err)?;
        Ok(to_json(&EpisodeView {
            steps_survived: r.steps_survived,
            cum_reward: r.cum_reward,
            total_cascades: r.total_cascades,
            failure_cause: r.failure_cause.as_str(),
            steps,
        }))
    }

    /// Survival histogram over every k-line contingency set.
    pub fn screen_histogram(&self, k: usize, seed: u64, use_agent: bool) -> Result<String, JsValue> {
        let plan = enumerate_contingencies(self.case.n_lines(), k).map_err(err)?;
        let ctx = ScreenContext::new(self.case.clone(), self.env.clone());
        let agent = if use_agent { self.agent.as_ref() } else { None };
        let limit = self.env.episode_limit;
        let n_bins = limit.div_ceil(10).max(1);
        let mut counts = vec![0; n_bins];
        let mut total = 0usize;
        for (i, set) in plan.sets.iter().enumerate() {
            let r = run_set(&ctx, agent, k, i, set, episode_seed(seed, k, i)).map_err(err)?;
            counts[(r.steps_survived / 10).min(n_bins - 1)] += 1;
            total += r.steps_survived;
        }
        let n = plan.sets.len();
        Ok(to_json(&HistogramView { k, n_sets: n, mean_survival: total as f64 / n as f64, counts }))
    }
}
