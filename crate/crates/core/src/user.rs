//! The value-driven proxy user.
//!
//! The user holds a fixed value profile, turns it into a latent goal set
//! every episode, and answers the agent's messages with confirmations,
//! denials and property hints. It never names a goal the agent has not
//! already guessed and never says where anything is.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{self, words};
use crate::lm::{ChatBackend, ChatExchange, ChatRole, LmError};
use crate::prompt::{self, PromptError};
use crate::seed::{self, salt};
use crate::tasks::{GoalSet, TaskSpec, ValueProfile};
use crate::world::Room;

#[derive(Debug, Error)]
pub enum UserError {
    #[error("goal sampling failed: backend answered `{answer}` twice")]
    GoalSamplingFailed { answer: String },
    #[error("communication backend error: {0}")]
    CommunicationBackendError(#[from] LmError),
    #[error("agent message is empty")]
    EmptyMessage,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Clone, Default)]
pub enum UserBackend {
    /// Deterministic rule-based replies.
    #[default]
    Scripted,
    Chat(Arc<dyn ChatBackend>),
}

impl std::fmt::Debug for UserBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UserBackend::Scripted => f.write_str("Scripted"),
            UserBackend::Chat(_) => f.write_str("Chat"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserState {
    pub values: ValueProfile,
    pub goal: GoalSet,
    /// 1-based.
    pub episode_index: u32,
    pub dialogue: Vec<ChatExchange>,
    pub progress: String,
    pub agent_action_log: Vec<String>,
    /// Goals confirmed to the agent so far this episode.
    pub confirmed: BTreeSet<String>,
    /// Property tags already hinted this episode.
    pub hinted: BTreeSet<String>,
    pub turn: u32,
}

impl UserState {
    pub fn new(values: ValueProfile, goal: GoalSet, episode_index: u32) -> Self {
        let mut state = UserState {
            values,
            goal,
            episode_index,
            dialogue: Vec::new(),
            progress: String::new(),
            agent_action_log: Vec::new(),
            confirmed: BTreeSet::new(),
            hinted: BTreeSet::new(),
            turn: 0,
        };
        state.progress = progress_note(&state);
        state
    }

    /// Starts the next episode with a freshly sampled goal set; values
    /// carry over.
    pub fn next_episode(&self, goal: GoalSet) -> Self {
        UserState::new(self.values.clone(), goal, self.episode_index + 1)
    }

    pub fn refresh_progress(&mut self) {
        self.progress = progress_note(self);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserReply {
    pub text: String,
    pub confirmed: BTreeSet<String>,
    pub denied: BTreeSet<String>,
    pub hinted_properties: BTreeSet<String>,
}

/// Attractiveness of each potential goal under a value profile: the sum
/// of level weights over the dimensions that affect it.
pub fn affinity_scores(spec: &TaskSpec, values: &ValueProfile) -> Vec<(String, u32)> {
    spec.potential_goals
        .iter()
        .map(|g| {
            let score = spec.dimensions_of(g).map(|d| values.level(d).weight()).sum();
            (g.clone(), score)
        })
        .collect()
}

/// Top-N by affinity; ties broken by a seeded shuffle.
pub fn scripted_goal_set(spec: &TaskSpec, values: &ValueProfile, seed: u64) -> GoalSet {
    let mut scored = affinity_scores(spec, values);
    scored.shuffle(&mut seed::rng(seed, salt::GOALS));
    scored.sort_by_key(|s| std::cmp::Reverse(s.1));
    GoalSet::new(scored.into_iter().take(spec.goal_count).map(|(g, _)| g))
}

fn parse_goal_answer(text: &str, spec: &TaskSpec) -> Option<BTreeSet<String>> {
    text.lines().rev().find_map(|line| {
        let line = line.trim().trim_start_matches("Answer:").trim();
        if line.is_empty() {
            return None;
        }
        let items: Vec<String> = line
            .split(',')
            .map(|s| s.trim().trim_end_matches('.').to_ascii_lowercase())
            .collect();
        let set: BTreeSet<String> = items.iter().cloned().collect();
        (items.len() == spec.goal_count
            && set.len() == items.len()
            && set.iter().all(|i| spec.is_potential_goal(i)))
        .then_some(set)
    })
}

pub fn generate_goal_set(
    spec: &TaskSpec,
    values: &ValueProfile,
    backend: &UserBackend,
    seed: u64,
) -> Result<GoalSet, UserError> {
    let chat = match backend {
        UserBackend::Scripted => return Ok(scripted_goal_set(spec, values, seed)),
        UserBackend::Chat(chat) => chat,
    };
    let vars = BTreeMap::from([
        ("GOAL_CNT", spec.goal_count.to_string()),
        ("Value", values.describe(spec)),
        ("Task", spec.description.clone()),
        ("GOAL", spec.potential_goals.join(", ")),
    ]);
    let mut history = vec![ChatExchange::agent(prompt::USER_GOAL.render(&vars)?)];
    let first = chat.chat(&history)?;
    if let Some(goals) = parse_goal_answer(&first, spec) {
        return Ok(GoalSet::new(goals));
    }
    history.push(ChatExchange::user(first));
    history.push(ChatExchange::agent(format!(
        "Answer with exactly {} distinct names from this list, comma-separated and nothing else: {}",
        spec.goal_count,
        spec.potential_goals.join(", ")
    )));
    let second = chat.chat(&history)?;
    parse_goal_answer(&second, spec)
        .map(GoalSet::new)
        .ok_or(UserError::GoalSamplingFailed { answer: second })
}

fn pick_tag<R: rand::Rng>(spec: &TaskSpec, goal: &str, avoid: &BTreeSet<String>, rng: &mut R) -> Option<String> {
    let tags: Vec<&str> = spec.properties_of(goal).collect();
    let fresh: Vec<&str> = tags.iter().copied().filter(|t| !avoid.contains(*t)).collect();
    let pool = if fresh.is_empty() { &tags } else { &fresh };
    pool.choose(rng).map(|t| t.to_string())
}

/// Rule-based reply to a guess.
///
/// Too many guesses (more than N + 2) confirm nothing. Otherwise correct
/// guesses are confirmed and wrong ones denied. A hint about one remaining
/// goal follows, or a note that everything is known. From the second
/// episode on the hint carries a single property tag.
pub fn scripted_respond(
    state: &UserState,
    spec: &TaskSpec,
    guessed: &BTreeSet<String>,
    seed: u64,
) -> UserReply {
    let mut rng = seed::rng(seed, salt::USER_REPLY);
    let goals = &state.goal.goals;
    let too_many = guessed.len() > spec.goal_count + 2;
    let (confirmed, denied): (BTreeSet<String>, BTreeSet<String>) = if too_many {
        Default::default()
    } else {
        guessed.iter().cloned().partition(|g| goals.contains(g))
    };

    let mut parts = Vec::new();
    if too_many {
        parts.push(dialogue::TOO_MANY.to_string());
    }
    if !confirmed.is_empty() {
        let names: Vec<&str> = confirmed.iter().map(String::as_str).collect();
        parts.push(if guessed == goals {
            dialogue::exact_confirmation(&names)
        } else {
            dialogue::confirmation(&names)
        });
    }
    if !denied.is_empty() {
        let names: Vec<&str> = denied.iter().map(String::as_str).collect();
        parts.push(dialogue::denial(&names));
    }

    let mut unconfirmed: Vec<&String> = goals
        .iter()
        .filter(|g| !state.confirmed.contains(*g) && !confirmed.contains(*g))
        .collect();
    let mut hinted = BTreeSet::new();
    if unconfirmed.is_empty() {
        parts.push(dialogue::ALL_CONFIRMED.to_string());
    } else {
        unconfirmed.shuffle(&mut rng);
        let wanted = if state.episode_index >= 2 { 1 } else { 2 };
        let mut tags: Vec<String> = Vec::new();
        for goal in unconfirmed.iter().take(wanted) {
            let mut avoid = state.hinted.clone();
            avoid.extend(tags.iter().cloned());
            if let Some(tag) = pick_tag(spec, goal, &avoid, &mut rng) {
                if !tags.contains(&tag) {
                    tags.push(tag);
                }
            }
        }
        let refs: Vec<&str> = tags.iter().map(String::as_str).collect();
        if state.episode_index >= 2 {
            parts.push(dialogue::terse_hint(refs[0]));
        } else {
            let also = !confirmed.is_empty() || !state.confirmed.is_empty();
            parts.push(dialogue::hint(&refs, also));
        }
        hinted.extend(tags);
    }

    UserReply {
        text: parts.join(" "),
        confirmed,
        denied,
        hinted_properties: hinted,
    }
}

/// Replaces every whole-word occurrence of a forbidden term.
fn redact(text: &str, forbidden: &BTreeSet<String>, replacement: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if forbidden.contains(&word.to_ascii_lowercase()) {
            out.push_str(replacement);
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn dialogue_history(dialogue: &[ChatExchange]) -> String {
    dialogue
        .iter()
        .map(|m| match m.role {
            ChatRole::Agent => format!("Alice: \"{}\"", m.content),
            _ => format!("Bob: \"{}\"", m.content),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the chat backend, then enforces truthfulness and non-revelation
/// on whatever it said.
fn chat_respond(
    chat: &dyn ChatBackend,
    state: &UserState,
    spec: &TaskSpec,
    message: &str,
    guessed: &BTreeSet<String>,
) -> Result<UserReply, UserError> {
    let recent: Vec<&str> = state
        .agent_action_log
        .iter()
        .rev()
        .take(10)
        .rev()
        .map(String::as_str)
        .collect();
    let vars = BTreeMap::from([
        ("Task", spec.description.clone()),
        ("EPISODE", state.episode_index.to_string()),
        ("GOAL", state.goal.goals.iter().cloned().collect::<Vec<_>>().join(", ")),
        ("PROGRESS", state.progress.clone()),
        ("ACTION_HISTORY", if recent.is_empty() { "none".into() } else { recent.join(", ") }),
        ("DIALOGUE_HISTORY", dialogue_history(&state.dialogue)),
        ("QUESTION", message.to_string()),
    ]);
    let prompt = prompt::USER_COMMUNICATION.render(&vars)?;
    let raw = chat.chat(&[ChatExchange::agent(prompt)])?;

    let goals = &state.goal.goals;
    let parsed = dialogue::parse_reply(&raw, spec);
    let too_many = guessed.len() > spec.goal_count + 2;
    let mut confirmed: BTreeSet<String> = parsed.confirmed.clone();
    let mut denied: BTreeSet<String> = parsed.denied.clone();
    if guessed.len() == 1 {
        if parsed.bare_yes {
            confirmed.extend(guessed.iter().cloned());
        }
        if parsed.bare_no {
            denied.extend(guessed.iter().cloned());
        }
    }
    if too_many {
        confirmed.clear();
    }
    let confirmed: BTreeSet<String> =
        confirmed.into_iter().filter(|g| guessed.contains(g) && goals.contains(g)).collect();
    let denied: BTreeSet<String> =
        denied.into_iter().filter(|g| guessed.contains(g) && !goals.contains(g)).collect();

    let mut forbidden: BTreeSet<String> = goals
        .iter()
        .filter(|g| !state.confirmed.contains(*g) && !confirmed.contains(*g))
        .cloned()
        .collect();
    let mut text = redact(&raw, &forbidden, "something");
    forbidden = Room::ALL
        .iter()
        .map(|r| r.name().to_string())
        .chain(spec.containers.iter().map(|c| c.class_name.clone()))
        .collect();
    text = redact(&text, &forbidden, "somewhere");

    let open_tags: BTreeSet<&str> = goals
        .iter()
        .filter(|g| !state.confirmed.contains(*g) && !confirmed.contains(*g))
        .flat_map(|g| spec.properties_of(g))
        .collect();
    let hinted_properties = parsed
        .hints
        .into_iter()
        .filter(|t| open_tags.contains(t.as_str()))
        .collect();
    Ok(UserReply {
        text,
        confirmed,
        denied,
        hinted_properties,
    })
}

/// Answers one agent message and records the exchange in `state`. The
/// caller accounts for tokens.
pub fn respond(
    state: &mut UserState,
    spec: &TaskSpec,
    agent_message: &str,
    backend: &UserBackend,
    seed: u64,
) -> Result<UserReply, UserError> {
    if agent_message.trim().is_empty() {
        return Err(UserError::EmptyMessage);
    }
    let guessed = dialogue::guessed_goals(agent_message, spec);
    let reply = match backend {
        UserBackend::Scripted => {
            scripted_respond(state, spec, &guessed, seed::mix(seed, u64::from(state.turn)))
        }
        UserBackend::Chat(chat) => chat_respond(chat.as_ref(), state, spec, agent_message, &guessed)?,
    };
    state.dialogue.push(ChatExchange::agent(agent_message));
    state.dialogue.push(ChatExchange::user(reply.text.clone()));
    state.confirmed.extend(reply.confirmed.iter().cloned());
    state.hinted.extend(reply.hinted_properties.iter().cloned());
    state.turn += 1;
    Ok(reply)
}

/// Human-readable summary of placements so far.
pub fn progress_note(state: &UserState) -> String {
    let done = state.goal.placed_correct.len();
    let wrong = state.goal.placed_wrong.len();
    let total = state.goal.goals.len();
    let mut note = if done == 0 {
        "no subgoals completed".to_string()
    } else {
        format!("{done} of {total} subgoals completed")
    };
    if wrong > 0 {
        let s = if wrong == 1 { "" } else { "s" };
        note.push_str(&format!("; {wrong} incorrect item{s} present"));
    }
    note
}

/// Goal names appearing in `text` that are not in `allowed`.
pub fn leaked_goals(text: &str, goals: &BTreeSet<String>, allowed: &BTreeSet<String>) -> Vec<String> {
    let present: BTreeSet<String> = words(text).collect();
    goals
        .iter()
        .filter(|g| !allowed.contains(*g) && present.contains(&g.to_ascii_lowercase()))
        .cloned()
        .collect()
}
