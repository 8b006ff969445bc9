//! Topology-control MDP over a [`GridCase`].
//!
//! One [`Environment`] runs one episode at a time. A step applies the agent
//! action, then the opponent attack, then the chronics for the step, solves
//! the power flow and runs the protection scan until no more lines trip.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::{live_graph, Busbar, Element, GridCase, Topology};
use crate::chronics::{self, chronics_at};
use crate::error::{EnvError, PowerFlowError};
use crate::opponent::{opponent_action, should_attack, OpponentConfig};
use crate::powerflow::{solve, solve_with, Injections, PowerFlowSolution, SolveOptions, Start};
use crate::reward::{ActionClass, RewardComponents, RewardConfig};
use crate::seed;

/// Features per graph node: P, Q injection (pu), |V|, angle, gen flag, load flag.
pub const NODE_FEATURES: usize = 6;
/// Global scalars appended to the pooled graph embedding: t / limit and max rho.
pub const GLOBAL_CONTEXT: usize = 2;

/// Length of [`Observation::context`] for a case with `n_lines` lines: the
/// global scalars followed by status and rho of every line.
pub fn context_len(n_lines: usize) -> usize {
    GLOBAL_CONTEXT + 2 * n_lines
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_limit: usize,
    pub load_scale: f64,
    pub rho_threshold: f64,
    /// Steps a line may stay in `1 < rho < hard_overflow_factor` before it trips.
    pub overflow_persistence: usize,
    pub hard_overflow_factor: f64,
    /// Steps before a disconnected or tripped line may be reconnected.
    pub line_cooldown: usize,
    /// Switch PV generators to PQ at their reactive limits. Off by default:
    /// generators hold their voltage setpoints, as in the usual simulation
    /// backends for this kind of study.
    pub enforce_q_limits: bool,
    pub opponent_enabled: bool,
    pub chronics_seed: u64,
    pub chronics_noise: f64,
    pub reward: RewardConfig,
    pub opponent: OpponentConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_limit: 100,
            load_scale: 1.0,
            rho_threshold: 0.95,
            overflow_persistence: 2,
            hard_overflow_factor: 2.0,
            line_cooldown: 3,
            enforce_q_limits: false,
            opponent_enabled: false,
            chronics_seed: 0,
            chronics_noise: chronics::DEFAULT_NOISE,
            reward: RewardConfig::default(),
            opponent: OpponentConfig::default(),
        }
    }
}

impl EnvConfig {
    /// Hostile screening scenario: opponent on, loading raised by 25%.
    pub fn hostile() -> Self {
        Self { load_scale: 1.25, opponent_enabled: true, ..Self::default() }
    }

    /// Copies the shared threshold into the reward and opponent sections.
    pub fn sync_threshold(&mut self) {
        self.reward.rho_threshold = self.rho_threshold;
        self.opponent.rho_threshold = self.rho_threshold;
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { enforce_q_limits: self.enforce_q_limits }
    }

    pub fn validate(&self, n_lines: usize) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.episode_limit < 1 {
            return bad("episode_limit must be >= 1");
        }
        if !(self.load_scale > 0.0) {
            return bad("load_scale must be > 0");
        }
        if !(self.rho_threshold > 0.0 && self.rho_threshold < self.hard_overflow_factor) {
            return bad("need 0 < rho_threshold < hard_overflow_factor");
        }
        if !(0.0..1.0).contains(&self.chronics_noise) {
            return bad("chronics_noise must be in [0, 1)");
        }
        self.reward.validate().map_err(EnvError::Config)?;
        self.opponent.validate(n_lines).map_err(EnvError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Action {
    DoNothing,
    SetLine { line: usize, connect: bool },
    SetSubstation { sub: usize, split: bool },
}

/// Precomputed two-busbar configuration of one substation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub sub: usize,
    pub busbar_two: Vec<Element>,
}

/// Discrete action indexing: `0` = do nothing, then connect for every line,
/// disconnect for every line, and a split/merge pair per splittable
/// substation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    n_lines: usize,
    splits: Vec<SplitConfig>,
}

impl ActionSpace {
    /// Builds the action set. For each substation with at least four
    /// elements, every assignment with two or more elements (one of them a
    /// line end) per busbar is tried on the nominal case; the one with the
    /// lowest maximum loading that solves without shedding is kept.
    pub fn new(case: &GridCase) -> Self {
        let inj = Injections::nominal(case);
        let mut splits = Vec::new();
        for sub in 0..case.n_buses() {
            let elems = case.substation_elements(sub);
            if elems.len() < 4 || elems.len() > 16 {
                continue;
            }
            let mut best: Option<(f64, Vec<Element>)> = None;
            // Element 0 stays on busbar one to skip mirror images.
            for mask in 1u32..(1 << (elems.len() - 1)) {
                let two: Vec<Element> = (1..elems.len())
                    .filter(|i| mask & (1 << (i - 1)) != 0)
                    .map(|i| elems[i])
                    .collect();
                let one: Vec<Element> =
                    elems.iter().copied().filter(|e| !two.contains(e)).collect();
                let is_line = |e: &Element| matches!(e, Element::LineFrom(_) | Element::LineTo(_));
                if one.len() < 2 || two.len() < 2 {
                    continue;
                }
                if !one.iter().any(is_line) || !two.iter().any(is_line) {
                    continue;
                }
                let mut topo = Topology::nominal(case);
                for &e in &two {
                    topo.set_busbar(e, Busbar::Two);
                }
                let Ok(sol) = solve(case, &topo, &inj, Start::Flat) else {
                    continue;
                };
                if !sol.shed_loads.is_empty() || !sol.shed_gens.is_empty() {
                    continue;
                }
                let score = sol.max_rho();
                if best.as_ref().map_or(true, |(b, _)| score < *b) {
                    best = Some((score, two));
                }
            }
            if let Some((_, busbar_two)) = best {
                splits.push(SplitConfig { sub, busbar_two });
            }
        }
        Self { n_lines: case.n_lines(), splits }
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.n_lines + 2 * self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn splits(&self) -> &[SplitConfig] {
        &self.splits
    }

    pub fn decode(&self, index: usize) -> Option<Action> {
        let n = self.n_lines;
        match index {
            0 => Some(Action::DoNothing),
            i if i <= n => Some(Action::SetLine { line: i - 1, connect: true }),
            i if i <= 2 * n => Some(Action::SetLine { line: i - 1 - n, connect: false }),
            i if i < self.len() => {
                let j = i - 1 - 2 * n;
                Some(Action::SetSubstation { sub: self.splits[j / 2].sub, split: j % 2 == 0 })
            }
            _ => None,
        }
    }

    pub fn encode(&self, action: &Action) -> Option<usize> {
        let n = self.n_lines;
        match *action {
            Action::DoNothing => Some(0),
            Action::SetLine { line, connect } if line < n => {
                Some(if connect { 1 + line } else { 1 + n + line })
            }
            Action::SetSubstation { sub, split } => self
                .splits
                .iter()
                .position(|s| s.sub == sub)
                .map(|j| 1 + 2 * n + 2 * j + usize::from(!split)),
            _ => None,
        }
    }

    fn split_for(&self, sub: usize) -> Option<&SplitConfig> {
        self.splits.iter().find(|s| s.sub == sub)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    None,
    Divergence,
    IslandedSlack,
    LimitReached,
    /// The initial power flow failed; recorded by screening, never by `step`.
    InfeasibleStart,
}

impl FailureCause {
    pub fn from_pf(err: &PowerFlowError) -> Self {
        match err {
            PowerFlowError::Diverged { .. } => FailureCause::Divergence,
            PowerFlowError::IslandedSlack => FailureCause::IslandedSlack,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FailureCause::None => "none",
            FailureCause::Divergence => "divergence",
            FailureCause::IslandedSlack => "islanded_slack",
            FailureCause::LimitReached => "limit_reached",
            FailureCause::InfeasibleStart => "infeasible_start",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FailureCause::None,
            FailureCause::Divergence,
            FailureCause::IslandedSlack,
            FailureCause::LimitReached,
            FailureCause::InfeasibleStart,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }

    pub fn is_blackout(&self) -> bool {
        matches!(self, FailureCause::Divergence | FailureCause::IslandedSlack | FailureCause::InfeasibleStart)
    }
}

/// Graph-structured view of the grid handed to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Row-major `n_nodes x NODE_FEATURES`.
    pub node_features: Vec<f64>,
    pub n_nodes: usize,
    /// Node pairs of in-service lines.
    pub edge_index: Vec<(usize, usize)>,
    /// Per line: status, rho, active flow at the from end (pu).
    pub edge_features: Vec<[f64; 3]>,
    pub t_normalized: f64,
    pub max_rho: f64,
    /// Legal-action mask over the action space.
    pub legal: Vec<bool>,
}

impl Observation {
    pub fn rho(&self) -> impl Iterator<Item = f64> + '_ {
        self.edge_features.iter().map(|e| e[1])
    }

    /// Non-graph input of the policy networks: `t_normalized`, `max_rho`,
    /// then `(status, rho)` per line. The pooled node embedding alone does not
    /// say which line is out or loaded.
    pub fn context(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(context_len(self.edge_features.len()));
        c.push(self.t_normalized);
        c.push(self.max_rho);
        for e in &self.edge_features {
            c.push(e[0]);
            c.push(e[1]);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Protection-initiated trips this step.
    pub cascades: usize,
    pub failure: FailureCause,
    pub action: Action,
    pub legal: bool,
    pub attacked: Vec<usize>,
    pub tripped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardComponents,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub action: Action,
    pub legal: bool,
    pub action_class: ActionClass,
    pub r_action: f64,
    pub r_survival: f64,
    pub r_overload: f64,
    pub r_total: f64,
    pub max_rho: f64,
    pub rho: Vec<f64>,
    pub attacked: Vec<usize>,
    pub trips: Vec<usize>,
    pub failure_cause: FailureCause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub topology: Topology,
    pub t: usize,
    pub overflow_counters: Vec<usize>,
    pub last_solution: Option<PowerFlowSolution>,
    pub injections: Injections,
    pub cumulative_cascades: usize,
    pub alive: bool,
}

/// Result of a protection scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub tripped: Vec<usize>,
    pub solves: usize,
    pub result: Result<PowerFlowSolution, PowerFlowError>,
}

/// Trips overloaded lines until the grid settles. A line trips at once when
/// `rho >= hard_overflow_factor`, or when it has been above 1 for more than
/// `overflow_persistence` consecutive steps including this one. Tripped
/// lines are locked out for `line_cooldown` steps. Overflow counters are
/// advanced once, from the settled solution.
#[allow(clippy::too_many_arguments)]
pub fn protection_scan(
    case: &GridCase,
    topo: &mut Topology,
    counters: &mut [usize],
    inj: &Injections,
    cfg: &EnvConfig,
    t: usize,
    initial: PowerFlowSolution,
) -> ScanOutcome {
    let mut tripped = Vec::new();
    let mut solves = 1;
    let mut sol = initial;
    loop {
        let trips: Vec<usize> = (0..case.n_lines())
            .filter(|&l| topo.line_status[l])
            .filter(|&l| {
                let r = sol.rho[l];
                r >= cfg.hard_overflow_factor || (r > 1.0 && counters[l] + 1 > cfg.overflow_persistence)
            })
            .collect();
        if trips.is_empty() {
            break;
        }
        for &l in &trips {
            topo.line_status[l] = false;
            topo.lockout_until[l] = topo.lockout_until[l].max(t + cfg.line_cooldown);
            counters[l] = 0;
        }
        tripped.extend_from_slice(&trips);
        solves += 1;
        match solve_with(case, topo, inj, Start::Warm(&sol), cfg.solve_options()) {
            Ok(next) => sol = next,
            Err(e) => return ScanOutcome { tripped, solves, result: Err(e) },
        }
    }
    for l in 0..case.n_lines() {
        counters[l] = if topo.line_status[l] && sol.rho[l] > 1.0 { counters[l] + 1 } else { 0 };
    }
    ScanOutcome { tripped, solves, result: Ok(sol) }
}

pub struct Environment {
    case: Arc<GridCase>,
    actions: Arc<ActionSpace>,
    config: EnvConfig,
    state: GridState,
    rng: ChaCha8Rng,
    last_obs: Option<Observation>,
    trace: Option<Vec<TraceRecord>>,
}

impl Environment {
    pub fn new(case: Arc<GridCase>, config: EnvConfig) -> Result<Self, EnvError> {
        let actions = Arc::new(ActionSpace::new(&case));
        Self::with_actions(case, actions, config)
    }

    /// Shares a precomputed action space between environments.
    pub fn with_actions(
        case: Arc<GridCase>,
        actions: Arc<ActionSpace>,
        mut config: EnvConfig,
    ) -> Result<Self, EnvError> {
        config.sync_threshold();
        config.validate(case.n_lines())?;
        let state = GridState {
            topology: Topology::nominal(&case),
            t: 0,
            overflow_counters: vec![0; case.n_lines()],
            last_solution: None,
            injections: Injections::nominal(&case),
            cumulative_cascades: 0,
            alive: false,
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            case,
            actions,
            config,
            state,
            last_obs: None,
            trace: None,
        })
    }

    pub fn case(&self) -> &GridCase {
        &self.case
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.config.chronics_seed = seed;
    }

    /// Starts collecting [`TraceRecord`]s for subsequent steps.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn injections_at(&self, t: usize) -> Injections {
        let m = chronics_at(
            &self.case,
            self.config.chronics_seed,
            t,
            self.config.load_scale,
            self.config.chronics_noise,
        );
        Injections::scaled(&self.case, &m.load, &m.gen)
    }

    /// Starts a new episode with `initial_outage` disconnected for its whole
    /// length.
    pub fn reset(&mut self, initial_outage: &[usize]) -> Result<Observation, EnvError> {
        let n = self.case.n_lines();
        if let Some(&bad) = initial_outage.iter().find(|&&l| l >= n) {
            return Err(EnvError::UnknownLine(bad));
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed::derive(&[self.config.chronics_seed, 0x0bb0]));
        let mut topo = Topology::nominal(&self.case);
        for &l in initial_outage {
            topo.line_status[l] = false;
            topo.lockout_until[l] = usize::MAX;
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.clear();
        }
        let inj = self.injections_at(0);
        self.state = GridState {
            topology: topo,
            t: 0,
            overflow_counters: vec![0; n],
            last_solution: None,
            injections: inj,
            cumulative_cascades: 0,
            alive: false,
        };
        self.last_obs = None;
        let sol = solve_with(
            &self.case,
            &self.state.topology,
            &self.state.injections,
            Start::Flat,
            self.config.solve_options(),
        )
        .map_err(EnvError::InfeasibleStart)?;
        self.state.last_solution = Some(sol);
        self.state.alive = true;
        let obs = self.observe();
        self.last_obs = Some(obs.clone());
        Ok(obs)
    }

    pub fn is_legal(&self, action: &Action) -> bool {
        let topo = &self.state.topology;
        let t = self.state.t;
        match *action {
            Action::DoNothing => true,
            Action::SetLine { line, connect } => {
                if line >= self.case.n_lines() {
                    return false;
                }
                if connect {
                    !topo.line_status[line] && !topo.is_locked(line, t)
                } else {
                    topo.line_status[line]
                }
            }
            Action::SetSubstation { sub, split } => {
                self.actions.split_for(sub).is_some() && topo.is_split(&self.case, sub) != split
            }
        }
    }

    pub fn legal_mask(&self) -> Vec<bool> {
        (0..self.actions.len())
            .map(|i| self.is_legal(&self.actions.decode(i).expect("index in range")))
            .collect()
    }

    fn apply_agent(&mut self, action: &Action) {
        let t = self.state.t;
        let cooldown = self.config.line_cooldown;
        let topo = &mut self.state.topology;
        match *action {
            Action::DoNothing => {}
            Action::SetLine { line, connect: true } => {
                topo.line_status[line] = true;
                self.state.overflow_counters[line] = 0;
            }
            Action::SetLine { line, connect: false } => {
                topo.line_status[line] = false;
                topo.lockout_until[line] = topo.lockout_until[line].max(t + cooldown);
            }
            Action::SetSubstation { sub, split } => {
                let cfg = self.actions.split_for(sub).expect("legal split");
                for e in self.case.substation_elements(sub) {
                    let to_two = split && cfg.busbar_two.contains(&e);
                    topo.set_busbar(e, if to_two { Busbar::Two } else { Busbar::One });
                }
            }
        }
    }

    pub fn step(&mut self, action_index: usize) -> Result<StepResult, EnvError> {
        if !self.state.alive {
            return Err(EnvError::EpisodeOver);
        }
        let t = self.state.t;
        let action = self.actions.decode(action_index).unwrap_or(Action::DoNothing);
        let legal = self.actions.decode(action_index).is_some() && self.is_legal(&action);
        let class = match (legal, action) {
            (false, _) => ActionClass::Other,
            (true, Action::DoNothing) => ActionClass::None,
            (true, _) => ActionClass::Minimal,
        };
        let applied = if legal { action } else { Action::DoNothing };
        self.apply_agent(&applied);

        let mut attacked = Vec::new();
        if self.config.opponent_enabled && should_attack(t, &self.config.opponent) {
            let prev = self.state.last_solution.as_ref().expect("alive state has a solution");
            // The opponent sees loadings after the agent's action.
            let rho = if applied == Action::DoNothing {
                prev.rho.clone()
            } else {
                solve_with(
                    &self.case,
                    &self.state.topology,
                    &self.state.injections,
                    Start::Warm(prev),
                    self.config.solve_options(),
                )
                .map(|s| s.rho)
                    .unwrap_or_else(|_| prev.rho.clone())
            };
            attacked = opponent_action(
                &rho,
                &self.state.topology.line_status,
                &self.config.opponent,
                &mut self.rng,
            );
            let until = t + self.config.opponent.attack_duration;
            for &l in &attacked {
                let topo = &mut self.state.topology;
                topo.line_status[l] = false;
                topo.lockout_until[l] = topo.lockout_until[l].max(until);
                self.state.overflow_counters[l] = 0;
            }
        }

        self.state.injections = self.injections_at(t);
        let warm = self.state.last_solution.take();
        let first = solve_with(
            &self.case,
            &self.state.topology,
            &self.state.injections,
            warm.as_ref().map_or(Start::Flat, Start::Warm),
            self.config.solve_options(),
        );
        let (tripped, outcome) = match first {
            Ok(sol) => {
                let scan = protection_scan(
                    &self.case,
                    &mut self.state.topology,
                    &mut self.state.overflow_counters,
                    &self.state.injections,
                    &self.config,
                    t,
                    sol,
                );
                (scan.tripped, scan.result)
            }
            Err(e) => (Vec::new(), Err(e)),
        };
        self.state.cumulative_cascades += tripped.len();

        let (failure, rho) = match &outcome {
            Ok(sol) => (FailureCause::None, sol.rho.clone()),
            Err(e) => (FailureCause::from_pf(e), vec![0.0; self.case.n_lines()]),
        };
        let reward = RewardComponents::compute(class, t, &rho, &self.config.reward);
        self.state.t = t + 1;
        let mut cause = failure;
        match outcome {
            Ok(sol) => {
                self.state.last_solution = Some(sol);
                if self.state.t >= self.config.episode_limit {
                    cause = FailureCause::LimitReached;
                    self.state.alive = false;
                }
            }
            Err(_) => {
                self.state.last_solution = warm;
                self.state.alive = false;
            }
        }
        let observation = if failure == FailureCause::None {
            let obs = self.observe();
            self.last_obs = Some(obs.clone());
            obs
        } else {
            self.last_obs.clone().expect("reset produced an observation")
        };
        let info = StepInfo {
            cascades: tripped.len(),
            failure: cause,
            action,
            legal,
            attacked,
            tripped,
        };
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                t,
                action,
                legal,
                action_class: class,
                r_action: reward.action,
                r_survival: reward.survival,
                r_overload: reward.overload,
                r_total: reward.total(),
                max_rho: rho.iter().copied().fold(0.0, f64::max),
                rho,
                attacked: info.attacked.clone(),
                trips: info.tripped.clone(),
                failure_cause: cause,
            });
        }
        Ok(StepResult { observation, reward, done: !self.state.alive, info })
    }

    fn observe(&self) -> Observation {
        let case = &self.case;
        let topo = &self.state.topology;
        let sol = self.state.last_solution.as_ref().expect("solved state");
        let graph = live_graph(case, topo);
        let n = graph.n_nodes();
        let base = case.base_mva;
        let mut feats = vec![0.0; n * NODE_FEATURES];
        for i in 0..n {
            let row = &mut feats[i * NODE_FEATURES..(i + 1) * NODE_FEATURES];
            row[0] = sol.p_inj_mw[i] / base;
            row[1] = sol.q_inj_mvar[i] / base;
            row[2] = sol.v_mag[i];
            row[3] = sol.v_ang[i];
        }
        for g in 0..case.generators.len() {
            let i = graph.node_of(case, topo, Element::Gen(g));
            feats[i * NODE_FEATURES + 4] = 1.0;
        }
        for d in 0..case.loads.len() {
            let i = graph.node_of(case, topo, Element::Load(d));
            feats[i * NODE_FEATURES + 5] = 1.0;
        }
        let edge_features = (0..case.n_lines())
            .map(|l| {
                let status = if topo.line_status[l] { 1.0 } else { 0.0 };
                [status, sol.rho[l], sol.line_flow_from[l].re / base]
            })
            .collect();
        Observation {
            node_features: feats,
            n_nodes: n,
            edge_index: graph.edges.iter().map(|&(_, a, b)| (a, b)).collect(),
            edge_features,
            t_normalized: self.state.t as f64 / self.config.episode_limit as f64,
            max_rho: sol.max_rho(),
            legal: self.legal_mask(),
        }
    }
}

pub fn write_trace_jsonl<W: std::io::Write>(
    mut out: W,
    records: &[TraceRecord],
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
