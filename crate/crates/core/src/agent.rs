//! The interface every assistant implementation exposes to the harness.

use thiserror::Error;

use crate::tasks::Score;
use crate::world::{Action, Observation, TransitionEvent};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("user reply contradicts earlier answers: {0}")]
    Contradiction(String),
    #[error("agent failure: {0}")]
    Other(String),
}

/// What happened after the agent's last action.
#[derive(Debug, Clone)]
pub struct StepOutcome<'a> {
    pub action: &'a Action,
    pub event: &'a TransitionEvent,
    /// Set for placements on any surface.
    pub score_delta: Option<Score>,
}

pub trait Agent: Send {
    /// Name used in reports, e.g. `famer`.
    fn kind(&self) -> &str;

    /// Called before the first observation of episode `episode` (1-based).
    fn begin_episode(&mut self, episode: u32);

    fn act(&mut self, obs: &Observation, legal: &[Action]) -> Result<Action, AgentError>;

    fn feedback(&mut self, _outcome: &StepOutcome<'_>) {}

    fn end_episode(&mut self) {}

    /// Persistent cross-episode memory, for agents that keep one.
    fn memory_document(&self) -> Option<String> {
        None
    }
}

/// `<name> (id)` rendering of an action, as used in prompts and logs.
pub fn describe_action(action: &Action, obs: &Observation) -> String {
    let name = |id| obs.class_of(id).unwrap_or("object").to_string();
    match action {
        Action::GoToRoom(room) => format!("[goto] <{}> ({})", room.name(), room.id()),
        Action::Open(id) => format!("[open] <{}> ({id})", name(*id)),
        Action::Grab(id) => format!("[grab] <{}> ({id})", name(*id)),
        Action::PutOn(id, surface) => {
            format!("[put] <{}> ({id}) on <{}> ({surface})", name(*id), name(*surface))
        }
        Action::Send(_) => "[send_message]".to_string(),
        Action::Wait => "[wait]".to_string(),
    }
}
