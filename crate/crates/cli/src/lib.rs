//! Command implementations behind the `gridguard` binary.

pub mod config;
pub mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gridguard::case::{bundled_ieee14, load_case, GridCase, Topology};
use gridguard::env::{context_len, ActionSpace};
use gridguard::error::{CaseError, CheckpointError, EnvError, ScreenError, TrainError};
use gridguard::neural::{load_params, save_params, PolicyBundle};
use gridguard::powerflow::{solve_with, Injections, SolveOptions, Start};
use gridguard::ppo::{evaluate, train, TrainSetup};
use gridguard::screening::{screen, AgentMode, ScreenContext, ScreenOptions, ScreeningSummary};
use serde::Serialize;
use thiserror::Error;

pub use config::{Layers, RunConfig};

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        match e {
            CaseError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(_) | EnvError::UnknownLine(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Io(_) => CliError::Io(e.to_string()),
            TrainError::Env(env) => env.into(),
            TrainError::Config(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<ScreenError> for CliError {
    fn from(e: ScreenError) -> Self {
        match e {
            ScreenError::KOutOfRange { .. } | ScreenError::MissingAgent => CliError::Usage(e.to_string()),
            ScreenError::MissingResult(_) | ScreenError::Json(_) => CliError::Input(e.to_string()),
            ScreenError::Env(env) => env.into(),
            ScreenError::Io(_) | ScreenError::Csv(_) => CliError::Io(e.to_string()),
            ScreenError::Checkpoint(c) => c.into(),
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn load_configured_case(path: Option<&Path>) -> Result<GridCase, CliError> {
    match path {
        Some(p) => Ok(load_case(p)?),
        None => Ok(bundled_ieee14()),
    }
}

/// Caps the worker threads used by training rollouts; results do not
/// depend on the count.
fn init_workers(jobs: usize) {
    if jobs > 0 {
        // Fails only if a pool already exists (e.g. a second call in one
        // process), in which case the first setting stands.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateReport {
    pub buses: usize,
    pub lines: usize,
    pub generators: usize,
    pub loads: usize,
    pub iterations: usize,
    pub max_rho: f64,
    pub max_rho_line: usize,
}

/// Loads a case and solves its nominal operating point from a flat start.
pub fn cmd_validate(case_path: Option<&Path>, opts: SolveOptions) -> Result<ValidateReport, CliError> {
    let case = load_configured_case(case_path)?;
    let topo = Topology::nominal(&case);
    let sol = solve_with(&case, &topo, &Injections::nominal(&case), Start::Flat, opts)
        .map_err(|e| CliError::Numerical(format!("base power flow: {e}")))?;
    let (max_rho_line, max_rho) = sol
        .rho
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    Ok(ValidateReport {
        buses: case.n_buses(),
        lines: case.n_lines(),
        generators: case.generators.len(),
        loads: case.loads.len(),
        iterations: sol.iterations,
        max_rho,
        max_rho_line,
    })
}

/// Splits a total step budget across the phases in proportion to the
/// configured schedule.
pub fn scale_schedule(cfg: &mut RunConfig, total: u64) {
    let s = &mut cfg.schedule;
    let old = s.total_steps();
    if old == 0 {
        s.mixed_steps = total;
        return;
    }
    let scale = |x: u64| ((x as u128 * total as u128) / old as u128) as u64;
    s.general_steps = scale(s.general_steps);
    s.critical_steps = scale(s.critical_steps);
    s.mixed_steps = total - s.general_steps - s.critical_steps;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub updates: u64,
    pub env_steps: u64,
    pub initial_eval_survival: f64,
    pub initial_eval_reward: f64,
    pub final_eval_survival: f64,
    pub final_eval_reward: f64,
    pub final_checkpoint: PathBuf,
}

/// Trains from `init` (or a fresh seeded bundle), writing into the output
/// directory: `config.json`, `train_log.jsonl`, `eval.json` and
/// `checkpoints/{initial,checkpoint_NNNNNN,final}.json`.
pub fn cmd_train(
    cfg: &RunConfig,
    init: Option<&Path>,
    progress: &mut dyn FnMut(&gridguard::ppo::TrainLogRecord),
) -> Result<TrainOutcome, CliError> {
    let case = Arc::new(load_configured_case(cfg.case.as_deref())?);
    cfg.validate(case.n_lines())?;
    init_workers(cfg.jobs);
    let actions = Arc::new(ActionSpace::new(&case));
    let out = &cfg.output_dir;
    cfg.write_echo(out)?;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;

    let mut bundle = match init {
        Some(path) => load_params(path)?,
        None => PolicyBundle::seeded(context_len(case.n_lines()), actions.len(), cfg.env.rho_threshold, cfg.seed),
    };
    if bundle.n_actions() != actions.len() || bundle.n_context() != context_len(case.n_lines()) {
        return Err(CliError::Input(format!(
            "checkpoint shape ({} actions, {} context) does not fit this case ({} actions, {} context)",
            bundle.n_actions(),
            bundle.n_context(),
            actions.len(),
            context_len(case.n_lines())
        )));
    }
    save_params(&bundle, ckpt_dir.join("initial.json"))?;

    let setup = TrainSetup {
        case,
        actions,
        benign: cfg.train_env.clone(),
        hostile: cfg.env.clone(),
        ppo: cfg.ppo.clone(),
        schedule: cfg.schedule.clone(),
        checkpoint_dir: Some(ckpt_dir.clone()),
    };
    let episodes = cfg.schedule.eval_episodes;
    let (initial_eval_survival, initial_eval_reward) = evaluate(&setup, &bundle, episodes, cfg.seed);

    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    train(&setup, &mut bundle, &mut |rec| {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
        log.flush()?;
        progress(rec);
        Ok(())
    })?;
    drop(log);

    let (final_eval_survival, final_eval_reward) = evaluate(&setup, &bundle, episodes, cfg.seed);
    let outcome = TrainOutcome {
        updates: bundle.metadata.updates,
        env_steps: bundle.metadata.env_steps,
        initial_eval_survival,
        initial_eval_reward,
        final_eval_survival,
        final_eval_reward,
        final_checkpoint: ckpt_dir.join("final.json"),
    };
    let eval_path = out.join("eval.json");
    let text = serde_json::to_string_pretty(&outcome).expect("serialises") + "\n";
    std::fs::write(&eval_path, text).map_err(|e| io_err(&eval_path, e))?;
    Ok(outcome)
}

/// Runs the configured screening into the output directory.
pub fn cmd_screen(
    cfg: &RunConfig,
    progress: &mut dyn FnMut(gridguard::screening::Progress),
) -> Result<Vec<ScreeningSummary>, CliError> {
    let case = Arc::new(load_configured_case(cfg.case.as_deref())?);
    cfg.validate(case.n_lines())?;
    let agent = if cfg.screen.modes.contains(&AgentMode::Agent) {
        let path = cfg
            .screen
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Usage("agent mode needs --checkpoint".into()))?;
        if !path.exists() {
            return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
        }
        Some(load_params(path)?)
    } else {
        None
    };
    let ctx = ScreenContext::new(case, cfg.env.clone());
    if let Some(bundle) = &agent {
        if bundle.n_actions() != ctx.actions.len() {
            return Err(CliError::Input(format!(
                "checkpoint has {} actions, case has {}",
                bundle.n_actions(),
                ctx.actions.len()
            )));
        }
    }
    let opts = ScreenOptions {
        ks: cfg.screen.ks.clone(),
        modes: cfg.screen.modes.clone(),
        base_seed: cfg.seed,
        jobs: cfg.jobs,
        trace_sets: cfg.screen.trace_sets,
        resume: cfg.screen.resume,
    };
    cfg.write_echo(&cfg.output_dir)?;
    let extra = serde_json::json!({
        "case": cfg.case,
        "checkpoint": agent.as_ref().and(cfg.screen.checkpoint.as_ref()),
    });
    Ok(screen(&ctx, agent.as_ref(), &opts, &cfg.output_dir, extra, progress)?)
}

/// Table of mean steps survived (and reward) per k, one column pair per
/// mode, in the layout of the usual N-k survival table.
pub fn format_summary_table(summaries: &[ScreeningSummary]) -> String {
    let mut modes: Vec<AgentMode> = summaries.iter().map(|s| s.mode).collect();
    modes.sort();
    modes.dedup();
    let mut ks: Vec<usize> = summaries.iter().map(|s| s.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut out = format!("{:>4} {:>7}", "k", "sets");
    for m in &modes {
        out += &format!(" {:>16} {:>16}", format!("{} T", m.as_str()), format!("{} R", m.as_str()));
    }
    out.push('\n');
    for k in ks {
        let n = summaries.iter().find(|s| s.k == k).map_or(0, |s| s.n_sets);
        out += &format!("{k:>4} {n:>7}");
        for m in &modes {
            match summaries.iter().find(|s| s.k == k && s.mode == *m) {
                Some(s) => out += &format!(" {:>16.2} {:>16.2}", s.mean_survival, s.mean_reward),
                None => out += &format!(" {:>16} {:>16}", "-", "-"),
            }
        }
        out.push('\n');
    }
    out
}

/// Parses `--k` values: `2`, `1,3,5` or `1..5` / `1..=5` (inclusive).
pub fn parse_k_list(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Usage(format!("cannot read k list '{text}'"));
    let mut ks = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            ks.extend(a..=b);
        } else {
            ks.push(part.parse().map_err(|_| bad())?);
        }
    }
    if ks.is_empty() {
        return Err(bad());
    }
    Ok(ks)
}

pub fn parse_modes(text: &str) -> Result<Vec<AgentMode>, CliError> {
    match text {
        "agent" => Ok(vec![AgentMode::Agent]),
        "no_agent" | "noagent" => Ok(vec![AgentMode::NoAgent]),
        "both" => Ok(vec![AgentMode::NoAgent, AgentMode::Agent]),
        _ => Err(CliError::Usage(format!("unknown mode '{text}' (agent, no_agent, both)"))),
    }
}
