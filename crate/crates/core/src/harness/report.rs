//! Transcripts on disk, metric replay and summary tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{AgentKind, HarnessError, SessionResult, TranscriptEntry};
use crate::baselines::{AGENT_NAME, OPPO_NAME};
use crate::lm::{count_tokens, ChatRole};
use crate::tasks::{on_placement, GoalSet, Score, TaskSpec};
use crate::world::TransitionEvent;

/// First line of every transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub task: String,
    pub agent: AgentKind,
    pub episode: u32,
    pub goal: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub score: Score,
    pub steps: u32,
    pub comm_tokens: usize,
}

pub fn write_transcript(path: &Path, header: &TranscriptHeader, entries: &[TranscriptEntry]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| HarnessError::io(path, e);
    writeln!(out, "{}", serde_json::to_string(header).expect("header serializes")).map_err(io)?;
    for entry in entries {
        writeln!(out, "{}", serde_json::to_string(entry).expect("entry serializes")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_transcript(path: &Path) -> Result<(TranscriptHeader, Vec<TranscriptEntry>), HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let format = |source| HarnessError::Format {
        path: path.to_path_buf(),
        source,
    };
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| format(serde::de::Error::custom("empty transcript")))?
        .map_err(|e| HarnessError::io(path, e))?;
    let header: TranscriptHeader = serde_json::from_str(&first).map_err(format)?;
    let mut entries = Vec::new();
    for line in lines {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(format)?);
    }
    Ok((header, entries))
}

/// Recomputes score, steps and tokens from the transcript alone.
pub fn replay_metrics(spec: &TaskSpec, goal: &BTreeSet<String>, entries: &[TranscriptEntry]) -> Metrics {
    let mut goals = GoalSet::new(goal.iter().cloned());
    let mut score = Score::ZERO;
    let mut steps = 0;
    let mut comm_tokens = 0;
    for entry in entries {
        match entry {
            TranscriptEntry::Step { event, .. } => {
                steps += 1;
                if matches!(event, TransitionEvent::Placed { .. }) {
                    score += on_placement(&mut goals, spec, event).expect("placement event");
                }
            }
            TranscriptEntry::Message { text, .. } => comm_tokens += count_tokens(text),
        }
    }
    Metrics {
        score,
        steps,
        comm_tokens,
    }
}

/// Turn-by-turn log with the agent as Alice and the user as Bob.
pub fn format_transcript(header: &TranscriptHeader, entries: &[TranscriptEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "task {} | agent {} | episode {} | goal {{{}}}",
        header.task,
        header.agent,
        header.episode,
        header.goal.iter().cloned().collect::<Vec<_>>().join(", ")
    );
    for entry in entries {
        match entry {
            TranscriptEntry::Step {
                step,
                action,
                text,
                event,
                score_delta,
            } => {
                if matches!(action, crate::world::Action::Send(_)) {
                    continue;
                }
                let _ = write!(out, "[{step:>3}] {AGENT_NAME}: {text}");
                match (event, score_delta) {
                    (TransitionEvent::Rejected { reason }, _) => {
                        let _ = write!(out, "  (rejected: {reason:?})");
                    }
                    (_, Some(d)) => {
                        let _ = write!(out, "  ({d})");
                    }
                    _ => {}
                }
                out.push('\n');
            }
            TranscriptEntry::Message { step, role, text, .. } => {
                let who = if *role == ChatRole::User { OPPO_NAME } else { AGENT_NAME };
                let _ = writeln!(out, "[{step:>3}] {who}: \"{text}\"");
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub agent: String,
    pub episode: u32,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of each metric per (task, agent,
/// episode); one row per metric.
pub fn aggregate(results: &[SessionResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, u32), Vec<Metrics>> = BTreeMap::new();
    for r in results {
        for e in &r.episodes {
            groups
                .entry((r.task.clone(), r.agent.to_string(), e.episode))
                .or_default()
                .push(e.metrics());
        }
    }
    let mut rows = Vec::new();
    for ((task, agent, episode), ms) in groups {
        let columns: [(&str, Vec<f64>); 3] = [
            ("score", ms.iter().map(|m| m.score.as_f64()).collect()),
            ("steps", ms.iter().map(|m| f64::from(m.steps)).collect()),
            ("comm_tokens", ms.iter().map(|m| m.comm_tokens as f64).collect()),
        ];
        for (metric, values) in columns {
            let (mean, std) = mean_std(&values);
            rows.push(SummaryRow {
                task: task.clone(),
                agent: agent.clone(),
                episode,
                metric: metric.to_string(),
                n: values.len(),
                mean,
                std,
            });
        }
    }
    rows
}

pub fn write_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e.into()))?;
    for row in rows {
        writer.serialize(row).map_err(|e| HarnessError::io(path, e.into()))?;
    }
    writer.flush().map_err(|e| HarnessError::io(path, e))
}

/// Every `session.json` below `dir`, in path order.
pub fn load_sessions(dir: &Path) -> Result<Vec<SessionResult>, HarnessError> {
    let mut paths: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == "session.json")
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            serde_json::from_str(&text).map_err(|source| HarnessError::Format {
                path: p.clone(),
                source,
            })
        })
        .collect()
}
