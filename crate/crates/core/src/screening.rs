//! Exhaustive N-k contingency screening: every k-subset of lines starts an
//! episode with those lines out for good, under the configured (normally
//! hostile) environment, with either the trained agent or a do-nothing
//! baseline.
//!
//! Each set's episode seed is derived from `(base_seed, k, set index)`, and
//! results are written in set order, so output files do not depend on the
//! number of worker threads.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::GridCase;
use crate::env::{write_trace_jsonl, ActionSpace, EnvConfig, Environment, FailureCause};
use crate::error::{EnvError, ScreenError};
use crate::neural::PolicyBundle;
use crate::ppo::{act, ActMode};
use crate::seed;

/// Sets run concurrently before their results are written out in order.
const WRITE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    Agent,
    NoAgent,
}

impl AgentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentMode::Agent => "agent",
            AgentMode::NoAgent => "no_agent",
        }
    }
}

/// All k-subsets of the lines in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyPlan {
    pub k: usize,
    pub n_lines: usize,
    pub sets: Vec<Vec<usize>>,
}

/// `C(n, k)` by the multiplicative formula.
pub fn n_choose_k(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

pub fn enumerate_contingencies(n_lines: usize, k: usize) -> Result<ContingencyPlan, ScreenError> {
    if k < 1 || k > n_lines {
        return Err(ScreenError::KOutOfRange { k, n: n_lines });
    }
    let mut sets = Vec::with_capacity(n_choose_k(n_lines as u64, k as u64) as usize);
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        sets.push(c.clone());
        // Advance the rightmost position that can still move.
        let Some(i) = (0..k).rev().find(|&i| c[i] != i + n_lines - k) else {
            break;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
    Ok(ContingencyPlan { k, n_lines, sets })
}

/// `"3-7"` style label of a set.
pub fn format_set(set: &[usize]) -> String {
    set.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
}

pub fn parse_set(text: &str) -> Option<Vec<usize>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split('-').map(|p| p.parse().ok()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub k: usize,
    pub index: usize,
    pub set: Vec<usize>,
    /// Steps completed without a blackout.
    pub steps_survived: usize,
    /// Sum of all step rewards, including the step that failed.
    pub cum_reward: f64,
    /// Protection trips per executed step (one entry per `step` call).
    pub cascade_series: Vec<usize>,
    pub total_cascades: usize,
    pub failure_cause: FailureCause,
}

/// Shared, read-only inputs of a screening run.
#[derive(Clone)]
pub struct ScreenContext {
    pub case: Arc<GridCase>,
    pub actions: Arc<ActionSpace>,
    pub env: EnvConfig,
}

impl ScreenContext {
    pub fn new(case: Arc<GridCase>, env: EnvConfig) -> Self {
        let actions = Arc::new(ActionSpace::new(&case));
        Self { case, actions, env }
    }
}

pub fn episode_seed(base_seed: u64, k: usize, index: usize) -> u64 {
    seed::derive(&[base_seed, k as u64, index as u64])
}

/// Runs one episode with `set` out for the whole episode. `agent = None`
/// does nothing every step; otherwise the dual policy acts greedily.
pub fn run_set_traced(
    ctx: &ScreenContext,
    agent: Option<&PolicyBundle>,
    k: usize,
    index: usize,
    set: &[usize],
    episode_seed: u64,
    trace: bool,
) -> Result<(EpisodeResult, Vec<crate::env::TraceRecord>), EnvError> {
    let mut cfg = ctx.env.clone();
    cfg.chronics_seed = episode_seed;
    let mut env = Environment::with_actions(ctx.case.clone(), ctx.actions.clone(), cfg)?;
    if trace {
        env.enable_trace();
    }
    let mut result = EpisodeResult {
        k,
        index,
        set: set.to_vec(),
        steps_survived: 0,
        cum_reward: 0.0,
        cascade_series: Vec::new(),
        total_cascades: 0,
        failure_cause: FailureCause::InfeasibleStart,
    };
    let mut obs = match env.reset(set) {
        Ok(obs) => obs,
        Err(EnvError::InfeasibleStart(_)) => return Ok((result, Vec::new())),
        Err(e) => return Err(e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    loop {
        let action = match agent {
            Some(bundle) => act(&obs, bundle, ActMode::Greedy, &mut rng).action,
            None => 0,
        };
        let r = env.step(action)?;
        result.cum_reward += r.reward.total();
        result.cascade_series.push(r.info.cascades);
        result.total_cascades += r.info.cascades;
        result.failure_cause = r.info.failure;
        if r.info.failure.is_blackout() {
            break;
        }
        result.steps_survived += 1;
        if r.done {
            break;
        }
        obs = r.observation;
    }
    Ok((result, env.take_trace()))
}

pub fn run_set(
    ctx: &ScreenContext,
    agent: Option<&PolicyBundle>,
    k: usize,
    index: usize,
    set: &[usize],
    episode_seed: u64,
) -> Result<EpisodeResult, EnvError> {
    run_set_traced(ctx, agent, k, index, set, episode_seed, false).map(|(r, _)| r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSummary {
    pub mode: AgentMode,
    pub k: usize,
    pub n_sets: usize,
    pub mean_survival: f64,
    pub mean_reward: f64,
    pub mean_total_cascades: f64,
    /// Mean protection trips at each step; dead episodes contribute 0.
    pub cascade_curve: Vec<f64>,
    pub failure_counts: BTreeMap<String, usize>,
}

/// Averages over exactly one result per set of `plan`.
pub fn aggregate(
    mode: AgentMode,
    plan: &ContingencyPlan,
    results: &[EpisodeResult],
    episode_limit: usize,
) -> Result<ScreeningSummary, ScreenError> {
    let by_index: HashMap<usize, &EpisodeResult> = results.iter().map(|r| (r.index, r)).collect();
    let n = plan.sets.len();
    let mut survival = 0.0;
    let mut reward = 0.0;
    let mut cascades = 0.0;
    let mut curve = vec![0.0; episode_limit];
    let mut failures = BTreeMap::new();
    for i in 0..n {
        let r = by_index.get(&i).ok_or(ScreenError::MissingResult(i))?;
        survival += r.steps_survived as f64;
        reward += r.cum_reward;
        cascades += r.total_cascades as f64;
        for (t, &c) in r.cascade_series.iter().enumerate().take(episode_limit) {
            curve[t] += c as f64;
        }
        *failures.entry(r.failure_cause.as_str().to_string()).or_insert(0) += 1;
    }
    let nf = n as f64;
    curve.iter_mut().for_each(|c| *c /= nf);
    Ok(ScreeningSummary {
        mode,
        k: plan.k,
        n_sets: n,
        mean_survival: survival / nf,
        mean_reward: reward / nf,
        mean_total_cascades: cascades / nf,
        cascade_curve: curve,
        failure_counts: failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenOptions {
    pub ks: Vec<usize>,
    pub modes: Vec<AgentMode>,
    pub base_seed: u64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    /// Step traces are written for the first this-many sets of each k.
    pub trace_sets: usize,
    /// Reuse results already present in the output directory.
    pub resume: bool,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self { ks: vec![1, 2], modes: vec![AgentMode::NoAgent], base_seed: 0, jobs: 0, trace_sets: 3, resume: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub mode: AgentMode,
    pub k: usize,
    pub done: usize,
    pub total: usize,
}

pub fn results_path(dir: &Path, mode: AgentMode) -> PathBuf {
    dir.join(format!("{}_results.jsonl", mode.as_str()))
}

pub fn csv_path(dir: &Path, mode: AgentMode) -> PathBuf {
    dir.join(format!("{}_sets.csv", mode.as_str()))
}

pub fn trace_path(dir: &Path, mode: AgentMode, k: usize, index: usize) -> PathBuf {
    dir.join("traces").join(format!("{}_k{k}_set{index}.jsonl", mode.as_str()))
}

/// Reads previously streamed results, dropping a torn final line.
fn load_existing(path: &Path) -> Result<Vec<EpisodeResult>, ScreenError> {
    let Ok(file) = File::open(path) else { return Ok(Vec::new()) };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        match serde_json::from_str::<EpisodeResult>(&line) {
            Ok(r) => out.push(r),
            Err(_) => break,
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    k: usize,
    set: String,
    steps_survived: usize,
    cum_reward: f64,
    total_cascades: usize,
    failure_cause: &'a str,
}

fn write_csv(path: &Path, results: &[EpisodeResult]) -> Result<(), ScreenError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(CsvRow {
            k: r.k,
            set: format_set(&r.set),
            steps_survived: r.steps_survived,
            cum_reward: r.cum_reward,
            total_cascades: r.total_cascades,
            failure_cause: r.failure_cause.as_str(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One per-set CSV row read back.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SetRow {
    pub k: usize,
    pub set: String,
    pub steps_survived: usize,
    pub cum_reward: f64,
    pub total_cascades: usize,
    pub failure_cause: String,
}

pub fn read_csv(path: &Path) -> Result<Vec<SetRow>, ScreenError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Result<Vec<SetRow>, _> = r.deserialize().collect();
    Ok(rows?)
}

fn run_chunk(
    ctx: &ScreenContext,
    agent: Option<&PolicyBundle>,
    k: usize,
    items: &[(usize, &Vec<usize>)],
    base_seed: u64,
    trace_sets: usize,
) -> Vec<Result<(EpisodeResult, Vec<crate::env::TraceRecord>), EnvError>> {
    let job = |&(i, set): &(usize, &Vec<usize>)| {
        run_set_traced(ctx, agent, k, i, set, episode_seed(base_seed, k, i), i < trace_sets)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(job).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(job).collect()
    }
}

/// Screens every requested `k` and mode, writing under `out_dir`:
/// `<mode>_results.jsonl` (streamed, resumable), `<mode>_sets.csv`,
/// `summary.json` and step traces for the first sets of each k.
pub fn screen(
    ctx: &ScreenContext,
    agent: Option<&PolicyBundle>,
    opts: &ScreenOptions,
    out_dir: &Path,
    extra_summary: serde_json::Value,
    progress: &mut dyn FnMut(Progress),
) -> Result<Vec<ScreeningSummary>, ScreenError> {
    let n_lines = ctx.case.n_lines();
    for &k in &opts.ks {
        if k < 1 || k > n_lines {
            return Err(ScreenError::KOutOfRange { k, n: n_lines });
        }
    }
    if opts.modes.contains(&AgentMode::Agent) && agent.is_none() {
        return Err(ScreenError::MissingAgent);
    }
    fs::create_dir_all(out_dir.join("traces"))?;
    #[cfg(feature = "parallel")]
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| ScreenError::Io(std::io::Error::other(e)))?;

    let mut summaries = Vec::new();
    for &mode in &opts.modes {
        let bundle = if mode == AgentMode::Agent { agent } else { None };
        let path = results_path(out_dir, mode);
        let mut existing: HashMap<(usize, usize), EpisodeResult> = HashMap::new();
        if opts.resume {
            for r in load_existing(&path)? {
                existing.insert((r.k, r.index), r);
            }
        }
        // Rewrite the stream so a torn line from an interrupted run is dropped.
        let mut stream = BufWriter::new(File::create(&path)?);
        let mut all = Vec::new();
        for &k in &opts.ks {
            let plan = enumerate_contingencies(n_lines, k)?;
            let total = plan.sets.len();
            let mut results: Vec<EpisodeResult> = Vec::with_capacity(total);
            let indexed: Vec<(usize, &Vec<usize>)> = plan.sets.iter().enumerate().collect();
            for chunk in indexed.chunks(WRITE_CHUNK) {
                let todo: Vec<(usize, &Vec<usize>)> =
                    chunk.iter().copied().filter(|(i, _)| !existing.contains_key(&(k, *i))).collect();
                #[cfg(feature = "parallel")]
                let fresh = pool.install(|| run_chunk(ctx, bundle, k, &todo, opts.base_seed, opts.trace_sets));
                #[cfg(not(feature = "parallel"))]
                let fresh = run_chunk(ctx, bundle, k, &todo, opts.base_seed, opts.trace_sets);
                let mut fresh = fresh.into_iter();
                for &(i, _) in chunk {
                    let r = match existing.remove(&(k, i)) {
                        Some(r) => r,
                        None => {
                            let (r, trace) = fresh.next().expect("one result per pending set").map_err(ScreenError::Env)?;
                            if !trace.is_empty() {
                                write_trace_jsonl(BufWriter::new(File::create(trace_path(out_dir, mode, k, i))?), &trace)?;
                            }
                            r
                        }
                    };
                    serde_json::to_writer(&mut stream, &r)?;
                    stream.write_all(b"\n")?;
                    results.push(r);
                }
                stream.flush()?;
                progress(Progress { mode, k, done: results.len(), total });
            }
            let summary = aggregate(mode, &plan, &results, ctx.env.episode_limit)?;
            summaries.push(summary);
            all.extend(results);
        }
        write_csv(&csv_path(out_dir, mode), &all)?;
    }
    let summary_doc = serde_json::json!({
        "base_seed": opts.base_seed,
        "ks": opts.ks,
        "modes": opts.modes,
        "trace_sets": opts.trace_sets,
        "env": ctx.env,
        "summaries": summaries,
        "run": extra_summary,
    });
    let mut f = BufWriter::new(OpenOptions::new().create(true).write(true).truncate(true).open(out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary_doc)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::bundled_ieee14;

    fn ctx(cfg: EnvConfig) -> ScreenContext {
        ScreenContext::new(Arc::new(bundled_ieee14()), cfg)
    }

    #[test]
    fn enumeration_counts_and_order() {
        assert_eq!(enumerate_contingencies(20, 1).unwrap().sets.len(), 20);
        let plan = enumerate_contingencies(20, 2).unwrap();
        assert_eq!(plan.sets.len(), 190);
        assert_eq!(plan.sets[0], vec![0, 1]);
        assert_eq!(plan.sets[189], vec![18, 19]);
        assert!(plan.sets.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(enumerate_contingencies(20, 5).unwrap().sets.len(), 15504);
        assert_eq!(enumerate_contingencies(4, 4).unwrap().sets, vec![vec![0, 1, 2, 3]]);
        assert!(matches!(enumerate_contingencies(20, 0), Err(ScreenError::KOutOfRange { .. })));
        assert!(matches!(enumerate_contingencies(20, 21), Err(ScreenError::KOutOfRange { .. })));
        assert_eq!(n_choose_k(20, 5), 15504);
    }

    #[test]
    fn set_labels_round_trip() {
        assert_eq!(format_set(&[3, 7]), "3-7");
        assert_eq!(parse_set("3-7"), Some(vec![3, 7]));
        assert_eq!(parse_set("x"), None);
    }

    #[test]
    fn run_set_examples() {
        let hostile = ctx(EnvConfig::hostile());
        let r = run_set(&hostile, None, 2, 0, &[0, 1], 5).unwrap();
        assert_eq!(r.steps_survived, 0);
        assert_eq!(r.failure_cause, FailureCause::InfeasibleStart);
        assert!(r.cascade_series.is_empty());

        let benign = ctx(EnvConfig::default());
        let r = run_set(&benign, None, 1, 10, &[10], 5).unwrap();
        assert_eq!(r.steps_survived, 100);
        assert_eq!(r.failure_cause, FailureCause::LimitReached);
        assert_eq!(r, run_set(&benign, None, 1, 10, &[10], 5).unwrap());
    }

    fn fake(index: usize, steps: usize, series: Vec<usize>) -> EpisodeResult {
        EpisodeResult {
            k: 1,
            index,
            set: vec![index],
            steps_survived: steps,
            cum_reward: steps as f64,
            total_cascades: series.iter().sum(),
            cascade_series: series,
            failure_cause: FailureCause::LimitReached,
        }
    }

    #[test]
    fn aggregate_examples() {
        let plan = ContingencyPlan { k: 1, n_lines: 2, sets: vec![vec![0], vec![1]] };
        let s = aggregate(AgentMode::NoAgent, &plan, &[fake(0, 0, vec![]), fake(1, 100, vec![0, 2, 1])], 100).unwrap();
        assert_eq!(s.mean_survival, 50.0);
        assert_eq!(s.cascade_curve[1], 1.0);
        assert_eq!(s.cascade_curve[2], 0.5);
        assert_eq!(s.cascade_curve.iter().sum::<f64>(), s.mean_total_cascades);
        let s = aggregate(AgentMode::NoAgent, &plan, &[fake(0, 100, vec![]), fake(1, 100, vec![])], 100).unwrap();
        assert_eq!(s.mean_survival, 100.0);
        assert!(matches!(aggregate(AgentMode::NoAgent, &plan, &[fake(0, 1, vec![])], 100), Err(ScreenError::MissingResult(1))));
    }

    fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in [dir.to_path_buf(), dir.join("traces")] {
            let mut names: Vec<_> = fs::read_dir(&sub).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
            names.sort();
            for p in names {
                out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
        out
    }

    #[test]
    fn screen_is_independent_of_jobs_and_resumable() {
        let c = ctx(EnvConfig::hostile());
        let opts = ScreenOptions { ks: vec![1], modes: vec![AgentMode::NoAgent], base_seed: 3, jobs: 1, trace_sets: 2, resume: false };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = screen(&c, None, &opts, a.path(), serde_json::Value::Null, &mut |_| {}).unwrap();
        let opts4 = ScreenOptions { jobs: 4, ..opts.clone() };
        let sb = screen(&c, None, &opts4, b.path(), serde_json::Value::Null, &mut |_| {}).unwrap();
        assert_eq!(sa, sb);
        let fa = files(a.path());
        let fb = files(b.path());
        for ((na, da), (nb, db)) in fa.iter().zip(&fb) {
            assert_eq!(na, nb);
            assert!(da == db, "{na} differs:\n{}\n---\n{}", String::from_utf8_lossy(da), String::from_utf8_lossy(db));
        }
        assert_eq!(fa.len(), fb.len());
        assert!(fa.iter().any(|(n, _)| n == "no_agent_k1_set1.jsonl"));

        let rows = read_csv(&csv_path(a.path(), AgentMode::NoAgent)).unwrap();
        assert_eq!(rows.len(), 20);
        let mean = rows.iter().map(|r| r.steps_survived as f64).sum::<f64>() / 20.0;
        assert_eq!(mean, sa[0].mean_survival);

        // Truncate the stream mid-line and resume: same files again.
        let stream = results_path(a.path(), AgentMode::NoAgent);
        let text = fs::read_to_string(&stream).unwrap();
        let cut: usize = text.match_indices('\n').nth(6).unwrap().0 + 20;
        fs::write(&stream, &text[..cut]).unwrap();
        let resumed = ScreenOptions { resume: true, ..opts };
        let sr = screen(&c, None, &resumed, a.path(), serde_json::Value::Null, &mut |_| {}).unwrap();
        assert_eq!(sr, sa);
        assert_eq!(files(a.path()), fa);
    }

    #[test]
    fn agent_mode_requires_bundle() {
        let c = ctx(EnvConfig::hostile());
        let opts = ScreenOptions { modes: vec![AgentMode::Agent], ..ScreenOptions::default() };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(screen(&c, None, &opts, dir.path(), serde_json::Value::Null, &mut |_| {}), Err(ScreenError::MissingAgent)));
    }
}
