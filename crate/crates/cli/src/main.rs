use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use homeassist_core::harness::{
    aggregate, format_transcript, load_sessions, read_transcript, replay_metrics, run_sessions, write_csv, SummaryRow,
};
use homeassist_core::{builtin_task, builtin_tasks, AgentKind, BackendConfig, BackendKind, SessionConfig, SessionResult, TaskSpec};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "homeassist", version, about = "Run and analyse household assistance sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run sessions and write transcripts, memory and results.
    Run(RunArgs),
    /// Summarise every session.json below a directory.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print a transcript and the metrics recomputed from it.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
        /// Task file, when the transcript is not from a builtin task.
        #[arg(long)]
        task: Option<PathBuf>,
    },
    /// List the builtin tasks.
    Tasks,
}

#[derive(Args)]
struct RunArgs {
    /// Session config file; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Agent name, repeatable, or `all`.
    #[arg(long)]
    agent: Vec<String>,
    #[arg(long)]
    episodes: Option<u32>,
    /// Base seed; session k uses seed + k. Defaults to the config's seeds,
    /// or 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    sessions: u64,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "mock" => Ok(BackendKind::Mock),
        "http" => Ok(BackendKind::Http),
        _ => Err(format!("unknown backend `{s}` (mock or http)")),
    }
}

fn agents(names: &[String], fallback: Option<AgentKind>) -> Result<Vec<AgentKind>> {
    if names.iter().any(|n| n == "all") {
        return Ok(AgentKind::ALL.to_vec());
    }
    if names.is_empty() {
        return Ok(vec![fallback.unwrap_or(AgentKind::Famer)]);
    }
    names
        .iter()
        .map(|n| n.parse::<AgentKind>().map_err(anyhow::Error::msg))
        .collect()
}

fn session_configs(args: &RunArgs) -> Result<Vec<SessionConfig>> {
    let base = match &args.config {
        Some(path) => Some(SessionConfig::load(path).with_context(|| format!("loading {}", path.display()))?),
        None => None,
    };
    let task = match (&args.task, &base) {
        (Some(t), _) => t.clone(),
        (None, Some(b)) => b.task.clone(),
        (None, None) => bail!("--task is required without --config"),
    };
    if args.sessions == 0 {
        bail!("--sessions must be at least 1");
    }
    let mut configs = Vec::new();
    for agent in agents(&args.agent, base.as_ref().map(|b| b.agent))? {
        for k in 0..args.sessions {
            let keep_seeds = base.is_some() && args.seed.is_none() && args.sessions == 1;
            let seed = args.seed.unwrap_or(0) + k;
            let fresh = SessionConfig::new(&task, agent, seed);
            let mut config = match &base {
                Some(b) if keep_seeds => SessionConfig { agent, ..b.clone() },
                Some(b) => SessionConfig {
                    agent,
                    seeds: fresh.seeds,
                    backend: BackendConfig { seed, ..b.backend.clone() },
                    ..b.clone()
                },
                None => fresh,
            };
            config.task = task.clone();
            if let Some(e) = args.episodes {
                config.episodes = e;
            }
            if let Some(kind) = args.backend {
                config.backend.kind = kind;
            }
            if let Some(out) = &args.out {
                config.output_dir = Some(out.join(agent.name()).join(format!("session_{k}")));
            }
            configs.push(config);
        }
    }
    Ok(configs)
}

fn print_rows(rows: &[SummaryRow]) {
    println!("{:<10} {:<18} {:>3} {:<12} {:>4} {:>10} {:>10}", "task", "agent", "ep", "metric", "n", "mean", "std");
    for r in rows {
        println!(
            "{:<10} {:<18} {:>3} {:<12} {:>4} {:>10.3} {:>10.3}",
            r.task, r.agent, r.episode, r.metric, r.n, r.mean, r.std
        );
    }
}

fn run(args: &RunArgs) -> Result<bool> {
    let configs = session_configs(args)?;
    let results = run_sessions(&configs);
    let mut ok: Vec<SessionResult> = Vec::new();
    let mut failed = false;
    for (config, result) in configs.iter().zip(results) {
        match result {
            Ok(r) => ok.push(r),
            Err(e) => {
                failed = true;
                eprintln!("{} session {:?}: {e}", config.agent, config.seeds);
            }
        }
    }
    for r in &ok {
        for e in &r.episodes {
            println!(
                "{} {} ep{} score={} steps={} tokens={}{}",
                r.task,
                r.agent,
                e.episode,
                e.score,
                e.steps,
                e.comm_tokens,
                e.aborted.as_deref().map(|a| format!(" aborted: {a}")).unwrap_or_default()
            );
        }
    }
    if ok.len() > 1 {
        print_rows(&aggregate(&ok));
    }
    Ok(!failed)
}

fn task_for_replay(id: &str, path: Option<&Path>) -> Result<TaskSpec> {
    Ok(match path {
        Some(p) => TaskSpec::load(p)?,
        None => builtin_task(id)?,
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(&args),
        Command::Aggregate { input, csv } => (|| {
            let sessions = load_sessions(&input)?;
            if sessions.is_empty() {
                bail!("no session.json under {}", input.display());
            }
            let rows = aggregate(&sessions);
            print_rows(&rows);
            if let Some(path) = csv {
                write_csv(&path, &rows)?;
            }
            Ok(true)
        })(),
        Command::Replay { transcript, task } => (|| {
            let (header, entries) = read_transcript(&transcript)?;
            let spec = task_for_replay(&header.task, task.as_deref())?;
            print!("{}", format_transcript(&header, &entries));
            let m = replay_metrics(&spec, &header.goal, &entries);
            println!("score={} steps={} tokens={}", m.score, m.steps, m.comm_tokens);
            Ok(true)
        })(),
        Command::Tasks => {
            for t in builtin_tasks() {
                println!(
                    "{:<8} N={} max_steps={} goals={} target={}",
                    t.id,
                    t.goal_count,
                    t.max_steps,
                    t.potential_goals.len(),
                    t.target_surface
                );
            }
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
