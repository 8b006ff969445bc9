use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridguard::powerflow::SolveOptions;
use gridguard_cli::config::{Layers, RunConfig};
use gridguard_cli::report::cmd_report;
use gridguard_cli::{
    cmd_screen, cmd_train, cmd_validate, format_summary_table, parse_k_list, parse_modes, scale_schedule, CliError,
};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "gridguard", version, about = "Grid topology control: validate, train, screen, report")]
struct Cli {
    /// Run configuration file (JSON); every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set env.opponent.tau_attack=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Base seed for training and screening (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (config key `output_dir`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Use the hyperparameter table as printed (entropy 0.999, discount
    /// 1e-3 / 5e-4) instead of the swapped reading.
    #[arg(long, global = true)]
    table_as_printed: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a case, solve its base power flow and print a summary.
    Validate {
        /// Case file; defaults to the configured or bundled case.
        case: Option<PathBuf>,
    },
    /// Train the dual policy.
    Train {
        /// Total environment steps, split across phases like the schedule.
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exhaustive N-k contingency screening.
    Screen {
        /// `2`, `1,3` or `1..5`.
        #[arg(long)]
        k: Option<String>,
        /// `agent`, `no_agent` or `both`.
        #[arg(long)]
        mode: Option<String>,
        /// Policy checkpoint for agent mode.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reuse results already streamed into the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Build plot-ready CSV tables from a screening directory.
    Report {
        run_dir: PathBuf,
        /// Defaults to `<run_dir>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn layers(cli: &Cli) -> Result<Layers, CliError> {
    let mut flags: Vec<(String, Value)> = Vec::new();
    if cli.table_as_printed {
        flags.push(("ppo_preset".into(), Value::from("as_printed")));
    }
    if let Some(s) = cli.seed {
        flags.push(("seed".into(), Value::from(s)));
    }
    if let Some(j) = cli.jobs {
        flags.push(("jobs".into(), Value::from(j)));
    }
    if let Some(o) = &cli.output {
        flags.push(("output_dir".into(), Value::from(o.to_string_lossy().into_owned())));
    }
    match &cli.command {
        Command::Screen { k, mode, checkpoint, resume } => {
            if let Some(k) = k {
                flags.push(("screen.ks".into(), serde_json::to_value(parse_k_list(k)?).expect("json")));
            }
            if let Some(m) = mode {
                flags.push(("screen.modes".into(), serde_json::to_value(parse_modes(m)?).expect("json")));
            }
            if let Some(c) = checkpoint {
                flags.push(("screen.checkpoint".into(), Value::from(c.to_string_lossy().into_owned())));
            }
            if *resume {
                flags.push(("screen.resume".into(), Value::from(true)));
            }
        }
        Command::Validate { case: Some(c) } => {
            flags.push(("case".into(), Value::from(c.to_string_lossy().into_owned())));
        }
        _ => {}
    }
    Ok(Layers { file: cli.config.clone(), sets: cli.sets.clone(), flags })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&layers(&cli)?)?;
    match cli.command {
        Command::Validate { .. } => {
            let opts = SolveOptions { enforce_q_limits: cfg.train_env.enforce_q_limits };
            let r = cmd_validate(cfg.case.as_deref(), opts)?;
            println!("{} buses, {} lines, {} generators, {} loads", r.buses, r.lines, r.generators, r.loads);
            println!("base power flow converged in {} iterations", r.iterations);
            println!("base-case max rho {:.4} (line {})", r.max_rho, r.max_rho_line);
        }
        Command::Train { steps, checkpoint } => {
            if let Some(total) = steps {
                scale_schedule(&mut cfg, total);
            }
            let outcome = cmd_train(&cfg, checkpoint.as_deref(), &mut |rec| {
                let eval = rec.eval_survival.map(|s| format!(" eval_survival={s:.2}")).unwrap_or_default();
                eprintln!(
                    "update {:>5} {:<8} {:<8} steps={:>8} ep_len={:>6.1} ep_reward={:>8.2} entropy={:.3} clip={:.3}{eval}",
                    rec.update,
                    rec.phase,
                    rec.policy.as_str(),
                    rec.env_steps,
                    rec.mean_episode_length,
                    rec.mean_episode_reward,
                    rec.entropy,
                    rec.clip_fraction,
                );
            })?;
            println!(
                "{} updates, {} environment steps; eval survival {:.2} -> {:.2}",
                outcome.updates, outcome.env_steps, outcome.initial_eval_survival, outcome.final_eval_survival
            );
            println!("final checkpoint: {}", outcome.final_checkpoint.display());
        }
        Command::Screen { .. } => {
            let summaries = cmd_screen(&cfg, &mut |p| {
                eprintln!("{} k={} {}/{}", p.mode.as_str(), p.k, p.done, p.total);
            })?;
            print!("{}", format_summary_table(&summaries));
            println!("outputs in {}", cfg.output_dir.display());
        }
        Command::Report { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("report"));
            let r = cmd_report(&run_dir, &out)?;
            for f in &r.files {
                println!("wrote {}", f.display());
            }
            if !r.paired.is_empty() {
                println!("{:>4} {:>12} {:>7} {:>9} {:>5}", "k", "set", "agent", "no_agent", "gap");
                for p in r.paired.iter().take(10) {
                    println!("{:>4} {:>12} {:>7} {:>9} {:>5}", p.k, p.set, p.agent_steps, p.no_agent_steps, p.gap);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
