//! Plot-ready CSV aggregates from a screening output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gridguard::env::TraceRecord;
use gridguard::screening::{csv_path, read_csv, AgentMode, ScreeningSummary, SetRow};
use serde::Serialize;

use crate::{io_err, CliError};

/// Width of the survival histogram bins, in steps.
pub const HIST_BIN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub k: usize,
    pub set: String,
    pub agent_steps: usize,
    pub no_agent_steps: usize,
    /// `agent_steps - no_agent_steps`.
    pub gap: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub out_dir: PathBuf,
    pub modes: Vec<AgentMode>,
    pub files: Vec<PathBuf>,
    pub paired: Vec<PairedRow>,
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    io_err(path, e)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Pairs the two modes set by set, largest agent advantage first (ties in
/// k, then set order).
pub fn paired_comparison(agent: &[SetRow], no_agent: &[SetRow]) -> Vec<PairedRow> {
    let base: BTreeMap<(usize, &str), usize> =
        no_agent.iter().map(|r| ((r.k, r.set.as_str()), r.steps_survived)).collect();
    let mut rows: Vec<(usize, PairedRow)> = agent
        .iter()
        .enumerate()
        .filter_map(|(order, r)| {
            base.get(&(r.k, r.set.as_str())).map(|&b| {
                (
                    order,
                    PairedRow {
                        k: r.k,
                        set: r.set.clone(),
                        agent_steps: r.steps_survived,
                        no_agent_steps: b,
                        gap: r.steps_survived as i64 - b as i64,
                    },
                )
            })
        })
        .collect();
    rows.sort_by(|a, b| b.1.gap.cmp(&a.1.gap).then(a.1.k.cmp(&b.1.k)).then(a.0.cmp(&b.0)));
    rows.into_iter().map(|(_, r)| r).collect()
}

#[derive(Serialize)]
struct SurvivalRow<'a> {
    k: usize,
    set: &'a str,
    steps_survived: usize,
}

#[derive(Serialize)]
struct HistRow {
    mode: &'static str,
    k: usize,
    bin_start: usize,
    bin_end: usize,
    count: usize,
}

/// Counts per `HIST_BIN`-wide bin; the final bin also holds `limit` itself.
pub fn histogram(steps: &[usize], limit: usize) -> Vec<(usize, usize, usize)> {
    let n_bins = limit.div_ceil(HIST_BIN).max(1);
    let mut counts = vec![0; n_bins];
    for &s in steps {
        counts[(s / HIST_BIN).min(n_bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i * HIST_BIN, if i + 1 == n_bins { limit } else { (i + 1) * HIST_BIN - 1 }, c))
        .collect()
}

#[derive(Serialize)]
struct CurveRow {
    mode: &'static str,
    k: usize,
    step: usize,
    mean_trips: f64,
}

fn read_summary(run_dir: &Path) -> Result<(Vec<ScreeningSummary>, usize), CliError> {
    let path = run_dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let summaries: Vec<ScreeningSummary> = serde_json::from_value(doc["summaries"].clone())
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let limit = doc["env"]["episode_limit"].as_u64().unwrap_or(100) as usize;
    Ok((summaries, limit))
}

/// Writes the ρ series of every trace file as rows `mode,k,set,t,max_rho,rho_0..`.
fn rho_series(run_dir: &Path, out: &Path) -> Result<Option<PathBuf>, CliError> {
    let dir = run_dir.join("traces");
    let Ok(entries) = fs::read_dir(&dir) else { return Ok(None) };
    let mut names: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    names.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    names.sort();
    if names.is_empty() {
        return Ok(None);
    }
    let path = out.join("rho_series.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut header_written = false;
    for file in names {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        // <mode>_k<k>_set<i>
        let Some((mode, rest)) = stem.rsplit_once("_k").map(|(m, r)| (m.to_string(), r.to_string())) else {
            continue;
        };
        let Some((k, set)) = rest.split_once("_set") else { continue };
        let text = fs::read_to_string(&file).map_err(|e| io_err(&file, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: TraceRecord =
                serde_json::from_str(line).map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
            if !header_written {
                let mut h: Vec<String> = ["mode", "k", "set", "t", "max_rho"].iter().map(|s| s.to_string()).collect();
                h.extend((0..rec.rho.len()).map(|i| format!("rho_{i}")));
                w.write_record(&h).map_err(|e| csv_err(&path, e))?;
                header_written = true;
            }
            let mut row = vec![mode.clone(), k.to_string(), set.to_string(), rec.t.to_string(), rec.max_rho.to_string()];
            row.extend(rec.rho.iter().map(|r| r.to_string()));
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(Some(path))
}

/// Builds the report tables of `run_dir` into `out_dir`.
pub fn cmd_report(run_dir: &Path, out_dir: &Path) -> Result<ReportFiles, CliError> {
    let modes: Vec<AgentMode> =
        [AgentMode::NoAgent, AgentMode::Agent].into_iter().filter(|m| csv_path(run_dir, *m).is_file()).collect();
    if modes.is_empty() {
        return Err(CliError::Usage(format!("no screening outputs in {}", run_dir.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let (summaries, limit) = read_summary(run_dir)?;
    let mut files = Vec::new();
    let mut rows_by_mode = BTreeMap::new();
    let mut hist = Vec::new();
    for &mode in &modes {
        let rows = read_csv(&csv_path(run_dir, mode)).map_err(|e| CliError::Input(e.to_string()))?;
        let path = out_dir.join(format!("survival_{}.csv", mode.as_str()));
        let survival: Vec<SurvivalRow> =
            rows.iter().map(|r| SurvivalRow { k: r.k, set: &r.set, steps_survived: r.steps_survived }).collect();
        write_rows(&path, &survival)?;
        files.push(path);
        let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
        ks.dedup();
        for k in ks {
            let steps: Vec<usize> = rows.iter().filter(|r| r.k == k).map(|r| r.steps_survived).collect();
            for (bin_start, bin_end, count) in histogram(&steps, limit) {
                hist.push(HistRow { mode: mode.as_str(), k, bin_start, bin_end, count });
            }
        }
        rows_by_mode.insert(mode, rows);
    }
    let path = out_dir.join("survival_histogram.csv");
    write_rows(&path, &hist)?;
    files.push(path);

    let curves: Vec<CurveRow> = summaries
        .iter()
        .flat_map(|s| {
            s.cascade_curve.iter().enumerate().map(move |(step, &mean_trips)| CurveRow {
                mode: s.mode.as_str(),
                k: s.k,
                step,
                mean_trips,
            })
        })
        .collect();
    let path = out_dir.join("cascade_curves.csv");
    write_rows(&path, &curves)?;
    files.push(path);

    if let Some(path) = rho_series(run_dir, out_dir)? {
        files.push(path);
    }

    let paired = match (rows_by_mode.get(&AgentMode::Agent), rows_by_mode.get(&AgentMode::NoAgent)) {
        (Some(a), Some(b)) => {
            let paired = paired_comparison(a, b);
            let path = out_dir.join("paired.csv");
            write_rows(&path, &paired)?;
            files.push(path);
            paired
        }
        _ => Vec::new(),
    };
    Ok(ReportFiles { out_dir: out_dir.to_path_buf(), modes, files, paired })
}
