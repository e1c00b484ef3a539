//! Deterministic offline backend.
//!
//! Responses come from a script when an entry matches; otherwise a
//! fallback derived from a hash of `(seed, history)` answers the prompt
//! shapes this crate sends (action selection, goal selection, messages).

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{check_messages, ChatBackend, ChatExchange, ChatRole, LmError};
use crate::seed::fnv1a;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockEntry {
    /// Index of the agent turn in the conversation (0 for the first).
    #[serde(default)]
    pub turn: Option<usize>,
    /// Substring the latest message must contain.
    #[serde(default)]
    pub contains: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, LmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LmError::Config(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| LmError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    seed: u64,
    script: MockScript,
}

impl MockBackend {
    pub fn new(seed: u64, script: MockScript) -> Self {
        MockBackend { seed, script }
    }

    fn history_hash(&self, messages: &[ChatExchange]) -> u64 {
        let bytes = self.seed.to_le_bytes().into_iter().chain(messages.iter().flat_map(|m| {
            std::iter::once(m.role as u8).chain(m.content.bytes()).chain(std::iter::once(0))
        }));
        fnv1a(bytes)
    }

    fn scripted(&self, messages: &[ChatExchange]) -> Option<&str> {
        let turn = messages
            .iter()
            .filter(|m| m.role == ChatRole::Agent)
            .count()
            .saturating_sub(1);
        let last = &messages.last()?.content;
        self.script
            .entries
            .iter()
            .find(|e| {
                e.turn.is_none_or(|t| t == turn)
                    && e.contains.as_ref().is_none_or(|c| last.contains(c.as_str()))
            })
            .map(|e| e.response.as_str())
    }

    fn fallback(&self, prompt: &str, hash: u64) -> String {
        if let Some(actions) = block_after(prompt, "Available actions:") {
            if !actions.is_empty() {
                return actions[(hash % actions.len() as u64) as usize].to_string();
            }
        }
        let goal_count = Regex::new(r"Select (\d+) objects").unwrap();
        if let (Some(n), Some(goals)) = (
            goal_count.captures(prompt).and_then(|c| c[1].parse::<usize>().ok()),
            line_after(prompt, "Potential Goals:"),
        ) {
            let mut pool: Vec<&str> = goals.split(',').map(str::trim).filter(|g| !g.is_empty()).collect();
            let mut picked = Vec::new();
            let mut h = hash;
            while picked.len() < n && !pool.is_empty() {
                picked.push(pool.remove((h % pool.len() as u64) as usize));
                h = h.rotate_left(17) ^ 0x9e37_79b9;
            }
            return picked.join(", ");
        }
        if prompt.contains("Alice asks this time:") {
            const HINTS: [&str; 3] = [
                "I'd like something that suits my mood.",
                "Keep looking, you're getting closer.",
                "Think about what I usually enjoy.",
            ];
            return HINTS[(hash % HINTS.len() as u64) as usize].to_string();
        }
        if prompt.contains("generate a short message") {
            let set = Regex::new(r"from the set \[([^\]]*)\]").unwrap();
            if let Some(c) = set.captures(prompt) {
                let names: Vec<&str> = c[1].split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                if !names.is_empty() {
                    let name = names[(hash % names.len() as u64) as usize];
                    return format!("Is {name} what you want?");
                }
            }
            return "Which objects would you like?".to_string();
        }
        "OK.".to_string()
    }
}

fn line_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.trim().strip_prefix(marker)).map(str::trim)
}

/// Non-empty lines following `marker` up to the next blank line.
fn block_after<'a>(text: &'a str, marker: &str) -> Option<Vec<&'a str>> {
    let start = text.find(marker)? + marker.len();
    Some(
        text[start..]
            .lines()
            .skip_while(|l| l.trim().is_empty())
            .take_while(|l| !l.trim().is_empty() && !l.trim_start().starts_with("Answer:"))
            .map(str::trim)
            .collect(),
    )
}

impl ChatBackend for MockBackend {
    fn chat(&self, messages: &[ChatExchange]) -> Result<String, LmError> {
        check_messages(messages)?;
        if let Some(response) = self.scripted(messages) {
            return Ok(response.to_string());
        }
        let hash = self.history_hash(messages);
        Ok(self.fallback(&messages.last().expect("checked").content, hash))
    }
}
