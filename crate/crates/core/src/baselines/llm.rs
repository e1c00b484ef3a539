//! Prompt-driven agents. Each step fills a planning prompt, asks the chat
//! backend, and maps the answer onto an available action.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use tracing::warn;

use super::{parse_action, SuccessMemory};
use crate::agent::{describe_action, Agent, AgentError, StepOutcome};
use crate::lm::{ChatBackend, ChatExchange};
use crate::prompt::{self, PromptTemplate};
use crate::tasks::TaskSpec;
use crate::world::{Action, Location, ObjectKind, Observation, TransitionEvent};

pub const AGENT_NAME: &str = "Alice";
pub const OPPO_NAME: &str = "Bob";

const RETRY: &str = "Your answer did not match any available action. Reply with exactly one line copied from the available actions.";

/// State both chat agents keep between steps.
struct Scratch {
    spec: TaskSpec,
    backend: Arc<dyn ChatBackend>,
    episode: u32,
    actions: Vec<String>,
    placed: Vec<String>,
    /// Object class → where it was last seen.
    sightings: BTreeMap<String, String>,
}

impl Scratch {
    fn new(spec: TaskSpec, backend: Arc<dyn ChatBackend>) -> Self {
        Scratch {
            spec,
            backend,
            episode: 0,
            actions: Vec::new(),
            placed: Vec::new(),
            sightings: BTreeMap::new(),
        }
    }

    fn begin(&mut self, episode: u32) {
        self.episode = episode;
        self.actions.clear();
        self.placed.clear();
        self.sightings.clear();
    }

    fn observe(&mut self, obs: &Observation) {
        for v in obs.visible_objects.iter().filter(|v| v.kind == ObjectKind::Graspable) {
            let place = match v.location {
                Location::Inside(c) | Location::On(c) => {
                    format!("{} in {}", obs.class_of(c).unwrap_or("something"), obs.room)
                }
                _ => obs.room.to_string(),
            };
            self.sightings.insert(v.class_name.clone(), place);
        }
    }

    fn progress(&self, obs: &Observation) -> String {
        let mut parts = Vec::new();
        let seen: Vec<String> = obs
            .visible_objects
            .iter()
            .map(|v| format!("<{}> ({})", v.class_name, v.id))
            .collect();
        parts.push(format!("I'm in the {}, where I can see {}.", obs.room, list_or_nothing(&seen)));
        let held: Vec<String> = obs.held.iter().map(|(id, c)| format!("<{c}> ({id})")).collect();
        parts.push(format!("I'm holding {}.", list_or_nothing(&held)));
        if !self.placed.is_empty() {
            parts.push(format!("I've put {} {}.", self.placed.join(", "), self.rel_target()));
        }
        parts.join(" ")
    }

    fn rel_target(&self) -> String {
        format!("on the {}", self.spec.target_surface)
    }

    fn common_vars(&self, obs: &Observation, legal: &[Action]) -> BTreeMap<&'static str, String> {
        let available: Vec<String> = legal.iter().map(|a| describe_action(a, obs)).collect();
        BTreeMap::from([
            ("AGENT_NAME", AGENT_NAME.to_string()),
            ("OPPO_NAME", OPPO_NAME.to_string()),
            ("Task", self.spec.description.clone()),
            ("GOAL_CNT", self.spec.goal_count.to_string()),
            ("GOAL", format!("[{}]", self.spec.potential_goals.join(", "))),
            ("REL_TARGET", self.rel_target()),
            ("PROGRESS", self.progress(obs)),
            ("ACTION_HISTORY", self.action_history()),
            ("AVAILABLE_ACTIONS", available.join("\n")),
        ])
    }

    fn action_history(&self) -> String {
        if self.actions.is_empty() {
            "None".to_string()
        } else {
            self.actions.join(", ")
        }
    }

    /// Asks for an action, retries once on a bad answer, then waits.
    fn choose(&self, template: PromptTemplate, vars: &BTreeMap<&str, String>, obs: &Observation, legal: &[Action]) -> Action {
        let text = match template.render(vars) {
            Ok(t) => t,
            Err(err) => {
                warn!(%err, "prompt rendering failed; waiting");
                return Action::Wait;
            }
        };
        let mut history = vec![ChatExchange::agent(text)];
        for _ in 0..2 {
            match self.backend.chat(&history) {
                Ok(reply) => {
                    if let Some(action) = parse_action(&reply, obs, legal) {
                        return action;
                    }
                    history.push(ChatExchange::user(reply));
                    history.push(ChatExchange::agent(RETRY));
                }
                Err(err) => {
                    warn!(%err, "chat backend failed; waiting");
                    return Action::Wait;
                }
            }
        }
        Action::Wait
    }

    fn feedback(&mut self, outcome: &StepOutcome<'_>) -> Option<(String, bool)> {
        if let TransitionEvent::Placed { class_name, surface_class, .. } = outcome.event {
            if *surface_class == self.spec.target_surface {
                self.placed.push(format!("<{class_name}>"));
                let achieved = outcome.score_delta.is_some_and(|d| d.0 > num_rational::Ratio::from_integer(0));
                return Some((class_name.clone(), achieved));
            }
        }
        None
    }
}

fn list_or_nothing(items: &[String]) -> String {
    if items.is_empty() {
        "nothing".to_string()
    } else {
        items.join(", ")
    }
}

/// Naive chat agent that plans and talks through one prompt each.
pub struct CoelaAgent {
    scratch: Scratch,
    dialogue: Vec<String>,
}

impl CoelaAgent {
    pub fn new(spec: TaskSpec, backend: Arc<dyn ChatBackend>) -> Self {
        CoelaAgent {
            scratch: Scratch::new(spec, backend),
            dialogue: Vec::new(),
        }
    }

    pub fn planning_prompt(&self, obs: &Observation, legal: &[Action]) -> BTreeMap<&'static str, String> {
        let mut vars = self.scratch.common_vars(obs, legal);
        vars.insert("DIALOGUE_HISTORY", self.dialogue.join("\n"));
        vars
    }

    fn message(&self, vars: &BTreeMap<&'static str, String>) -> Option<String> {
        let text = prompt::COELA_COMMUNICATION.render(vars).ok()?;
        match self.scratch.backend.chat(&[ChatExchange::agent(text)]) {
            Ok(reply) => {
                let reply = reply.trim().trim_matches('"').trim().to_string();
                (!reply.is_empty()).then_some(reply)
            }
            Err(err) => {
                warn!(%err, "chat backend failed while writing a message");
                None
            }
        }
    }
}

impl Agent for CoelaAgent {
    fn kind(&self) -> &str {
        "coela"
    }

    fn begin_episode(&mut self, episode: u32) {
        self.scratch.begin(episode);
        self.dialogue.clear();
    }

    fn act(&mut self, obs: &Observation, legal: &[Action]) -> Result<Action, AgentError> {
        if let Some(text) = &obs.incoming_message {
            self.dialogue.push(format!("{OPPO_NAME}: \"{text}\""));
        }
        self.scratch.observe(obs);
        let vars = self.planning_prompt(obs, legal);
        let mut action = self.scratch.choose(prompt::COELA_PLANNING, &vars, obs, legal);
        if matches!(action, Action::Send(_)) {
            action = match self.message(&vars) {
                Some(text) => {
                    self.dialogue.push(format!("{AGENT_NAME}: \"{text}\""));
                    Action::Send(text)
                }
                None => Action::Wait,
            };
        }
        self.scratch.actions.push(describe_action(&action, obs));
        Ok(action)
    }

    fn feedback(&mut self, outcome: &StepOutcome<'_>) {
        self.scratch.feedback(outcome);
    }
}

/// Chat agent with a cross-episode success history; cannot talk.
pub struct ProAgent {
    scratch: Scratch,
    success: SuccessMemory,
}

impl ProAgent {
    pub fn new(spec: TaskSpec, backend: Arc<dyn ChatBackend>) -> Self {
        ProAgent {
            scratch: Scratch::new(spec, backend),
            success: SuccessMemory::default(),
        }
    }

    pub fn success_memory(&self) -> &SuccessMemory {
        &self.success
    }

    pub fn record_success(&mut self, episode: u32, class_name: &str, achieved: bool) {
        self.success.record(episode, class_name, achieved);
    }

    fn success_history(&self) -> String {
        let mut by_episode: BTreeMap<u32, BTreeSet<&str>> = BTreeMap::new();
        for e in self.success.entries().iter().filter(|e| e.achieved) {
            by_episode.entry(e.episode).or_default().insert(&e.class_name);
        }
        if by_episode.is_empty() {
            return "None".to_string();
        }
        by_episode
            .iter()
            .map(|(ep, classes)| {
                let items: Vec<String> = classes.iter().map(|c| format!("<{c}>")).collect();
                format!("Episode {ep}: found and put {} {}", items.join(", "), self.scratch.rel_target())
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn belief_state(&self) -> String {
        if self.scratch.sightings.is_empty() {
            return "Nothing observed yet.".to_string();
        }
        self.scratch
            .sightings
            .iter()
            .map(|(c, p)| format!("<{c}> in {p}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn planning_prompt(&self, obs: &Observation, legal: &[Action]) -> BTreeMap<&'static str, String> {
        let mut vars = self.scratch.common_vars(obs, legal);
        vars.insert("HISTORY_OF_SUCCESSFUL_SUBGOALS", self.success_history());
        vars.insert("BELIEF_STATE", self.belief_state());
        vars
    }

    pub fn render_prompt(&self, obs: &Observation, legal: &[Action]) -> String {
        let legal: Vec<Action> = legal.iter().filter(|a| !matches!(a, Action::Send(_))).cloned().collect();
        prompt::PROAGENT
            .render(&self.planning_prompt(obs, &legal))
            .expect("all variables supplied")
    }
}

impl Agent for ProAgent {
    fn kind(&self) -> &str {
        "proagent"
    }

    fn begin_episode(&mut self, episode: u32) {
        self.scratch.begin(episode);
    }

    fn act(&mut self, obs: &Observation, legal: &[Action]) -> Result<Action, AgentError> {
        self.scratch.observe(obs);
        let legal: Vec<Action> = legal.iter().filter(|a| !matches!(a, Action::Send(_))).cloned().collect();
        let vars = self.planning_prompt(obs, &legal);
        let action = self.scratch.choose(prompt::PROAGENT, &vars, obs, &legal);
        self.scratch.actions.push(describe_action(&action, obs));
        Ok(action)
    }

    fn feedback(&mut self, outcome: &StepOutcome<'_>) {
        if let Some((class, achieved)) = self.scratch.feedback(outcome) {
            let episode = self.scratch.episode;
            self.success.record(episode, &class, achieved);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{MockBackend, MockEntry, MockScript};
    use crate::tasks::builtin_task;
    use crate::world::{build_scene, legal_actions, observe};

    fn mock(entries: Vec<MockEntry>) -> Arc<dyn ChatBackend> {
        Arc::new(MockBackend::new(1, MockScript { entries }))
    }

    #[test]
    fn planning_prompt_names_goal_count_slot() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = build_scene(&spec, 1).unwrap();
        let obs = observe(&scene);
        let legal = legal_actions(&scene);
        let agent = CoelaAgent::new(spec, mock(vec![]));
        let text = prompt::COELA_PLANNING.render(&agent.planning_prompt(&obs, &legal)).unwrap();
        assert!(text.contains("2 object(s) determined by human user from the set [cupcake,"));
        assert!(text.contains("[send_message]"));
    }

    #[test]
    fn unparseable_twice_waits() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = build_scene(&spec, 1).unwrap();
        let obs = observe(&scene);
        let legal = legal_actions(&scene);
        let entry = MockEntry {
            turn: None,
            contains: None,
            response: "I am not sure what to do.".into(),
        };
        let mut agent = CoelaAgent::new(spec, mock(vec![entry]));
        agent.begin_episode(1);
        assert_eq!(agent.act(&obs, &legal).unwrap(), Action::Wait);
    }

    #[test]
    fn send_uses_communication_prompt() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = build_scene(&spec, 1).unwrap();
        let obs = observe(&scene);
        let legal = legal_actions(&scene);
        let entries = vec![
            MockEntry {
                turn: None,
                contains: Some("generate a short message".into()),
                response: "Is juice what you want?".into(),
            },
            MockEntry {
                turn: None,
                contains: None,
                response: "[send_message]".into(),
            },
        ];
        let mut agent = CoelaAgent::new(spec, mock(entries));
        agent.begin_episode(1);
        assert_eq!(agent.act(&obs, &legal).unwrap(), Action::Send("Is juice what you want?".into()));
    }

    #[test]
    fn proagent_never_sends() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = build_scene(&spec, 1).unwrap();
        let obs = observe(&scene);
        let legal = legal_actions(&scene);
        let entry = MockEntry {
            turn: None,
            contains: None,
            response: "[send_message]".into(),
        };
        let mut agent = ProAgent::new(spec, mock(vec![entry]));
        agent.begin_episode(1);
        assert_eq!(agent.act(&obs, &legal).unwrap(), Action::Wait);
        assert!(!agent.render_prompt(&obs, &legal).contains("[send_message]"));
    }

    #[test]
    fn success_history_block() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = build_scene(&spec, 1).unwrap();
        let obs = observe(&scene);
        let legal = legal_actions(&scene);
        let mut agent = ProAgent::new(spec, mock(vec![]));
        assert!(agent.render_prompt(&obs, &legal).contains("success experience. \nYou should focus"));
        agent.record_success(1, "wine", true);
        agent.record_success(1, "milk", false);
        let text = agent.render_prompt(&obs, &legal);
        assert!(text.contains("Episode 1: found and put <wine> on the coffeetable"));
        assert!(!text.contains("<milk> on"));
    }
}
