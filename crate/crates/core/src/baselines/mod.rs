//! Comparison agents: a goal-sampling rollout planner and two
//! prompt-driven chat agents.

mod llm;
mod mhp;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::describe_action;
use crate::world::{Action, Observation};

pub use llm::{CoelaAgent, ProAgent, AGENT_NAME, OPPO_NAME};
pub use mhp::{sample_subset, subset_weights, MhpAgent, MhpConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessEntry {
    pub episode: u32,
    pub class_name: String,
    pub achieved: bool,
}

/// Append-only log of what was placed and whether it counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessMemory {
    entries: Vec<SuccessEntry>,
}

impl SuccessMemory {
    pub fn record(&mut self, episode: u32, class_name: &str, achieved: bool) {
        self.entries.push(SuccessEntry {
            episode,
            class_name: class_name.to_string(),
            achieved,
        });
    }

    pub fn entries(&self) -> &[SuccessEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self, class_name: &str) -> usize {
        self.entries.iter().filter(|e| e.achieved && e.class_name == class_name).count()
    }

    pub fn misses(&self, class_name: &str) -> usize {
        self.entries.iter().filter(|e| !e.achieved && e.class_name == class_name).count()
    }
}

fn action_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\[?\b(goto|go to|walk to|open|grab|put|send_message|wait)\b\]?(?:\s*<([^>]+)>\s*\(([^)]*)\))?(?:\s*on\s*<([^>]+)>\s*\(([^)]*)\))?",
        )
        .unwrap()
    })
}

fn target_matches(name: Option<&str>, id: Option<&str>, action_name: &str, action_id: &str) -> bool {
    let name = name.map(|n| n.trim().to_ascii_lowercase());
    match id.map(str::trim) {
        Some(i) if i.parse::<u32>().is_ok() => i == action_id,
        _ => name.is_some_and(|n| n == action_name),
    }
}

/// Maps a free-text model answer onto one of the `legal` actions.
///
/// A line that repeats an available action verbatim wins. Otherwise the
/// first `verb <name> (id)` mention is matched by id, or by name when the
/// id is not a number.
pub fn parse_action(reply: &str, obs: &Observation, legal: &[Action]) -> Option<Action> {
    let rendered: Vec<(String, &Action)> = legal.iter().map(|a| (describe_action(a, obs), a)).collect();
    let clean = |l: &str| {
        let l = l.trim().trim_start_matches('-').trim();
        let l = l.strip_prefix("Best Next Action:").unwrap_or(l);
        let l = l.strip_prefix("Answer:").unwrap_or(l);
        l.trim().trim_matches(|c| c == '"' || c == '`' || c == '*').trim().to_string()
    };
    for line in reply.lines() {
        let line = clean(line);
        if let Some((_, a)) = rendered.iter().find(|(r, _)| r.eq_ignore_ascii_case(&line)) {
            return Some((*a).clone());
        }
    }
    // Prefer the line that names the chosen action, if any.
    let focus = reply
        .lines()
        .find(|l| l.contains("Best Next Action"))
        .map(str::to_string)
        .unwrap_or_else(|| reply.to_string());
    for caps in action_pattern().captures_iter(&focus) {
        let verb = caps[1].to_ascii_lowercase();
        let name = caps.get(2).map(|m| m.as_str());
        let id = caps.get(3).map(|m| m.as_str());
        let found = legal.iter().find(|a| match (a, verb.as_str()) {
            (Action::GoToRoom(r), "goto" | "go to" | "walk to") => {
                target_matches(name, id, r.name(), &r.id().to_string())
            }
            (Action::Open(o), "open") | (Action::Grab(o), "grab") => {
                obs.class_of(*o).is_some_and(|c| target_matches(name, id, c, &o.to_string()))
            }
            (Action::PutOn(o, s), "put") => {
                obs.class_of(*o).is_some_and(|c| target_matches(name, id, c, &o.to_string()))
                    && match caps.get(4) {
                        None => true,
                        Some(sn) => obs.class_of(*s).is_some_and(|c| {
                            target_matches(Some(sn.as_str()), caps.get(5).map(|m| m.as_str()), c, &s.to_string())
                        }),
                    }
            }
            (Action::Send(_), "send_message") => true,
            (Action::Wait, "wait") => name.is_none(),
            _ => false,
        });
        if let Some(a) = found {
            return Some(a.clone());
        }
    }
    None
}
