//! The FAMER assistant: remembers where things are, confirms and infers
//! what the user wants, asks only when it helps, and plans around that.

pub mod memory;
pub mod mental;
pub mod planner;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::agent::{describe_action, Agent, AgentError, StepOutcome};
use crate::dialogue;
use crate::lm::ChatExchange;
use crate::tasks::TaskSpec;
use crate::user::UserReply;
use crate::world::{Action, Observation, TransitionEvent};

pub use memory::{extract_keyinfo, AgentMemory, KeyFact, MemoryFormatError};
pub use mental::{confirm_goals, decide_communication, infer_desires, CommBudget, InferenceParams, MentalModel};
pub use planner::{filter_actions, plan_next, EpisodeBelief};

/// Module switches; turning one off replaces that module with a
/// pass-through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamerConfig {
    pub desire_inference: bool,
    pub efficient_comm: bool,
    pub key_info: bool,
    pub inference: InferenceParams,
}

impl Default for FamerConfig {
    fn default() -> Self {
        FamerConfig {
            desire_inference: true,
            efficient_comm: true,
            key_info: true,
            inference: InferenceParams::default(),
        }
    }
}

impl FamerConfig {
    pub fn kind(&self) -> &'static str {
        match (self.desire_inference, self.efficient_comm, self.key_info) {
            (false, true, true) => "famer_wo_desire",
            (true, false, true) => "famer_wo_ec",
            (true, true, false) => "famer_wo_keyinfo",
            _ => "famer",
        }
    }
}

pub struct FamerAgent {
    spec: TaskSpec,
    config: FamerConfig,
    seed: u64,
    memory: AgentMemory,
    belief: EpisodeBelief,
    turn: u32,
}

impl FamerAgent {
    pub fn new(spec: TaskSpec, config: FamerConfig, seed: u64) -> Self {
        let memory = AgentMemory::new(&spec, config.key_info);
        FamerAgent {
            spec,
            config,
            seed,
            memory,
            belief: EpisodeBelief::new(0, seed, 0),
            turn: 0,
        }
    }

    /// Resumes from a persisted memory document.
    pub fn with_memory(spec: TaskSpec, config: FamerConfig, seed: u64, memory: AgentMemory) -> Self {
        let mut agent = Self::new(spec, config, seed);
        agent.memory = memory;
        agent
    }

    pub fn memory(&self) -> &AgentMemory {
        &self.memory
    }

    pub fn mental(&self) -> &MentalModel {
        &self.memory.mental
    }

    pub fn belief(&self) -> &EpisodeBelief {
        &self.belief
    }

    /// Interprets a reply to the last question. Only names that were
    /// asked about count; a bare "yes"/"no" settles a single-name question.
    pub fn read_reply(&self, text: &str) -> UserReply {
        let parsed = dialogue::parse_reply(text, &self.spec);
        let guess = &self.belief.last_guess;
        let mut confirmed: BTreeSet<String> = parsed.confirmed.intersection(guess).cloned().collect();
        let mut denied: BTreeSet<String> = parsed.denied.intersection(guess).cloned().collect();
        if guess.len() == 1 && confirmed.is_empty() && denied.is_empty() {
            if parsed.bare_yes && !parsed.bare_no {
                confirmed = guess.clone();
            } else if parsed.bare_no && !parsed.bare_yes {
                denied = guess.clone();
            }
        }
        UserReply {
            text: text.to_string(),
            confirmed,
            denied,
            hinted_properties: parsed.hints.into_iter().collect(),
        }
    }

    fn absorb_reply(&mut self, text: &str) {
        self.memory.dialogue_log.push(ChatExchange::user(text));
        let mut reply = self.read_reply(text);
        if let Err(err) = confirm_goals(&reply, self.turn, &mut self.memory.mental) {
            warn!(%err, "dropping contradictory parts of the reply");
            let mental = &self.memory.mental;
            reply.confirmed.retain(|g| !mental.denied.contains(g) && !reply.denied.contains(g));
            reply.denied.retain(|g| !mental.confirmed.contains(g));
            let _ = confirm_goals(&reply, self.turn, &mut self.memory.mental);
        }
        self.turn += 1;
        self.belief.last_guess.clear();
        if self.config.desire_inference {
            infer_desires(&mut self.memory.mental, &self.spec, self.config.inference);
        }
    }
}

impl Agent for FamerAgent {
    fn kind(&self) -> &str {
        self.config.kind()
    }

    fn begin_episode(&mut self, episode: u32) {
        if episode > 1 || !self.memory.confirmed_by_episode.is_empty() {
            self.memory.mental.begin_episode(&self.spec);
        }
        self.belief = EpisodeBelief::new(episode, self.seed, self.memory.dialogue_log.len());
        if self.config.desire_inference {
            infer_desires(&mut self.memory.mental, &self.spec, self.config.inference);
        }
    }

    fn act(&mut self, obs: &Observation, legal: &[Action]) -> Result<Action, AgentError> {
        if let Some(text) = &obs.incoming_message {
            self.absorb_reply(text);
        }
        self.belief.observe(obs, &self.spec);
        extract_keyinfo(obs, &self.spec, self.belief.episode, &mut self.memory);

        let log = &self.memory.dialogue_log[self.belief.dialogue_start..];
        let question = decide_communication(
            &self.memory.mental,
            log,
            &self.spec,
            &self.belief.budget,
            obs.step_count,
            self.config.efficient_comm,
        );
        let mental = self.memory.mental.clone();
        let action = plan_next(obs, &mental, &mut self.memory, &mut self.belief, &self.spec, question);

        let allowed = filter_actions(legal, obs, &mental, &self.spec);
        let action = match &action {
            Action::Send(_) if allowed.contains(&Action::send_placeholder()) => action,
            _ if allowed.contains(&action) => action,
            _ => {
                warn!(?action, "planned action not available; waiting");
                Action::Wait
            }
        };
        if let Action::Send(text) = &action {
            self.belief.budget.record(obs.step_count);
            self.belief.last_guess = dialogue::guessed_goals(text, &self.spec);
            self.memory.dialogue_log.push(ChatExchange::agent(text.clone()));
        }
        self.memory.action_log.push(describe_action(&action, obs));
        Ok(action)
    }

    fn feedback(&mut self, outcome: &StepOutcome<'_>) {
        if let TransitionEvent::Placed {
            class_name,
            surface_class,
            ..
        } = outcome.event
        {
            if *surface_class == self.spec.target_surface {
                self.belief.delivered.insert(class_name.clone());
            }
        }
    }

    fn end_episode(&mut self) {
        self.memory.confirmed_by_episode.push(self.memory.mental.known_goals());
    }

    fn memory_document(&self) -> Option<String> {
        Some(self.memory.persist())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::builtin_task;

    #[test]
    fn bare_yes_confirms_single_guess() {
        let spec = builtin_task("snack-m").unwrap();
        let mut agent = FamerAgent::new(spec, FamerConfig::default(), 1);
        agent.begin_episode(1);
        agent.belief.last_guess = ["juice".to_string()].into();
        let r = agent.read_reply("Correct! Try to look for something crunchy");
        assert_eq!(r.confirmed, ["juice".to_string()].into());
        assert_eq!(r.hinted_properties, ["crunchy".to_string()].into());
        agent.belief.last_guess = ["juice".to_string(), "wine".to_string()].into();
        let r = agent.read_reply("Correct!");
        assert!(r.confirmed.is_empty());
    }

    #[test]
    fn names_outside_the_question_are_ignored() {
        let spec = builtin_task("snack-m").unwrap();
        let mut agent = FamerAgent::new(spec, FamerConfig::default(), 1);
        agent.begin_episode(1);
        agent.belief.last_guess = ["milk".to_string()].into();
        let r = agent.read_reply("Yes, milk and wine are right.");
        assert_eq!(r.confirmed, ["milk".to_string()].into());
    }

    #[test]
    fn ablation_kinds() {
        let base = FamerConfig::default();
        assert_eq!(base.kind(), "famer");
        assert_eq!(FamerConfig { key_info: false, ..base }.kind(), "famer_wo_keyinfo");
        assert_eq!(FamerConfig { efficient_comm: false, ..base }.kind(), "famer_wo_ec");
        assert_eq!(FamerConfig { desire_inference: false, ..base }.kind(), "famer_wo_desire");
    }
}
