//! Cross-episode memory: where goal-relevant objects were seen, what the
//! user confirmed, and the raw dialogue and action history.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mental::MentalModel;
use crate::lm::{ChatExchange, ChatRole};
use crate::tasks::{Level, TaskSpec};
use crate::world::{Location, ObjectKind, Observation, Room};

#[derive(Debug, Error)]
pub enum MemoryFormatError {
    #[error("malformed memory document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("memory document i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// "juice in fridge in kitchen". `container` is `None` for objects lying
/// in the open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFact {
    pub object: String,
    pub container: Option<String>,
    pub room: Room,
    pub episode: u32,
    pub valid: bool,
}

impl std::fmt::Display for KeyFact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.container {
            Some(c) => write!(f, "{} in {} in {}", self.object, c, self.room),
            None => write!(f, "{} in {}", self.object, self.room),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMemory {
    /// `None` when key-information extraction is disabled.
    pub key_facts: Option<Vec<KeyFact>>,
    pub confirmed_by_episode: Vec<BTreeSet<String>>,
    pub mental: MentalModel,
    pub dialogue_log: Vec<ChatExchange>,
    pub action_log: Vec<String>,
}

/// On-disk layout. The summary sections are derived and only written for
/// readers; loading ignores them.
#[derive(Serialize, Deserialize)]
struct MemoryDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_facts: Option<Vec<KeyFact>>,
    confirmed_by_episode: Vec<BTreeSet<String>>,
    #[serde(default)]
    inferred_values: BTreeMap<String, Level>,
    #[serde(default)]
    past_episode_goals: Vec<BTreeSet<String>>,
    #[serde(default)]
    dialogue_summary: Vec<String>,
    mental_state: MentalModel,
    dialogue_log: Vec<ChatExchange>,
    action_log: Vec<String>,
}

impl AgentMemory {
    pub fn new(spec: &TaskSpec, key_info: bool) -> Self {
        AgentMemory {
            key_facts: key_info.then(Vec::new),
            confirmed_by_episode: Vec::new(),
            mental: MentalModel::new(spec),
            dialogue_log: Vec::new(),
            action_log: Vec::new(),
        }
    }

    /// Valid fact for `object`, if any.
    pub fn fact(&self, object: &str) -> Option<&KeyFact> {
        self.key_facts.as_ref()?.iter().find(|f| f.valid && f.object == object)
    }

    pub fn invalidate(&mut self, object: &str) {
        for f in self.key_facts.iter_mut().flatten() {
            if f.object == object {
                f.valid = false;
            }
        }
    }

    pub fn upsert(&mut self, fact: KeyFact) {
        let Some(facts) = self.key_facts.as_mut() else {
            return;
        };
        let same = |f: &KeyFact| f.object == fact.object && f.container == fact.container && f.room == fact.room;
        if facts.iter().any(|f| f.valid && same(f)) {
            return;
        }
        for f in facts.iter_mut().filter(|f| f.object == fact.object) {
            f.valid = false;
        }
        match facts.iter_mut().find(|f| same(f)) {
            Some(old) => old.valid = true,
            None => facts.push(fact),
        }
    }

    pub fn persist(&self) -> String {
        let summary = self
            .dialogue_log
            .iter()
            .map(|e| match e.role {
                ChatRole::Agent => format!("agent: {}", e.content),
                ChatRole::User => format!("user: {}", e.content),
                ChatRole::System => format!("system: {}", e.content),
            })
            .collect();
        let doc = MemoryDocument {
            key_facts: self.key_facts.clone(),
            confirmed_by_episode: self.confirmed_by_episode.clone(),
            inferred_values: self.mental.inferred_values.clone(),
            past_episode_goals: self.mental.past_episode_goals.clone(),
            dialogue_summary: summary,
            mental_state: self.mental.clone(),
            dialogue_log: self.dialogue_log.clone(),
            action_log: self.action_log.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("memory always serializes")
    }

    pub fn load(text: &str) -> Result<Self, MemoryFormatError> {
        let doc: MemoryDocument = serde_json::from_str(text)?;
        Ok(AgentMemory {
            key_facts: doc.key_facts,
            confirmed_by_episode: doc.confirmed_by_episode,
            mental: doc.mental_state,
            dialogue_log: doc.dialogue_log,
            action_log: doc.action_log,
        })
    }

    pub fn load_file(path: &Path) -> Result<Self, MemoryFormatError> {
        Self::load(&std::fs::read_to_string(path)?)
    }
}

/// Objects that some live hypothesis (or a confirmation) still allows.
fn relevant(mental: &MentalModel, spec: &TaskSpec, class: &str) -> bool {
    if !spec.is_potential_goal(class) || mental.denied.contains(class) {
        return false;
    }
    if mental.confirmed.contains(class) || MentalModel::uses_marginals(spec) {
        return true;
    }
    mental.hypotheses.iter().any(|h| h.weight > 0.0 && h.goals.contains(class))
}

/// Records where goal-relevant objects are. Objects already on the
/// target surface are skipped; they were put there, not found there.
pub fn extract_keyinfo(obs: &Observation, spec: &TaskSpec, episode: u32, memory: &mut AgentMemory) {
    if memory.key_facts.is_none() {
        return;
    }
    let mut found = Vec::new();
    for v in obs.visible_objects.iter().filter(|v| v.kind == ObjectKind::Graspable) {
        if !relevant(&memory.mental, spec, &v.class_name) {
            continue;
        }
        let container = match v.location {
            Location::InRoom(_) => None,
            Location::Inside(c) | Location::On(c) => {
                let Some(anchor) = obs.class_of(c) else { continue };
                if anchor == spec.target_surface {
                    continue;
                }
                Some(anchor.to_string())
            }
            Location::Held => continue,
        };
        found.push(KeyFact {
            object: v.class_name.clone(),
            container,
            room: obs.room,
            episode,
            valid: true,
        });
    }
    for fact in found {
        memory.upsert(fact);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::famer::mental::Hint;
    use crate::tasks::builtin_task;
    use crate::world::{observe, build_scene, Action, SceneState};
    use proptest::prelude::*;

    fn kitchen_with_open_fridge(spec: &TaskSpec) -> SceneState {
        let mut scene = build_scene(spec, 1).unwrap();
        let fridge = scene.find_class("fridge").unwrap().id;
        let juice = scene.find_class("juice").unwrap().id;
        let toothbrush = scene.find_class("toothbrush").unwrap().id;
        scene.objects.get_mut(&juice).unwrap().location = Location::Inside(fridge);
        scene.objects.get_mut(&toothbrush).unwrap().location = Location::InRoom(Room::Kitchen);
        scene.step(&Action::GoToRoom(Room::Kitchen));
        scene.step(&Action::Open(fridge));
        scene
    }

    #[test]
    fn juice_in_fridge_in_kitchen() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = kitchen_with_open_fridge(&spec);
        let mut memory = AgentMemory::new(&spec, true);
        extract_keyinfo(&observe(&scene), &spec, 1, &mut memory);
        let juice = memory.fact("juice").unwrap();
        assert_eq!(juice.to_string(), "juice in fridge in kitchen");
        assert!(memory.fact("toothbrush").is_none());
        let before = memory.clone();
        extract_keyinfo(&observe(&scene), &spec, 1, &mut memory);
        assert_eq!(memory, before);
    }

    #[test]
    fn denied_objects_produce_no_fact() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = kitchen_with_open_fridge(&spec);
        let mut memory = AgentMemory::new(&spec, true);
        memory.mental.denied.insert("juice".into());
        memory.mental.hypotheses.retain(|h| !h.goals.contains("juice"));
        extract_keyinfo(&observe(&scene), &spec, 1, &mut memory);
        assert!(memory.fact("juice").is_none());
    }

    #[test]
    fn moved_object_replaces_old_fact() {
        let spec = builtin_task("snack-m").unwrap();
        let mut memory = AgentMemory::new(&spec, true);
        let fact = |c: Option<&str>, room| KeyFact {
            object: "milk".into(),
            container: c.map(str::to_string),
            room,
            episode: 1,
            valid: true,
        };
        memory.upsert(fact(Some("fridge"), Room::Kitchen));
        memory.upsert(fact(None, Room::Bedroom));
        assert_eq!(memory.fact("milk").unwrap().room, Room::Bedroom);
        assert_eq!(memory.key_facts.as_ref().unwrap().len(), 2);
        memory.upsert(fact(Some("fridge"), Room::Kitchen));
        assert_eq!(memory.fact("milk").unwrap().room, Room::Kitchen);
        assert_eq!(memory.key_facts.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn disabled_memory_has_no_key_facts_section() {
        let spec = builtin_task("snack-m").unwrap();
        let scene = kitchen_with_open_fridge(&spec);
        let mut memory = AgentMemory::new(&spec, false);
        extract_keyinfo(&observe(&scene), &spec, 1, &mut memory);
        let doc = memory.persist();
        assert!(!doc.contains("key_facts"));
        assert_eq!(AgentMemory::load(&doc).unwrap(), memory);
    }

    #[test]
    fn empty_memory_round_trips() {
        let spec = builtin_task("table-m").unwrap();
        let memory = AgentMemory::new(&spec, true);
        assert_eq!(AgentMemory::load(&memory.persist()).unwrap(), memory);
    }

    #[test]
    fn malformed_document_is_rejected() {
        assert!(AgentMemory::load("{\"key_facts\": 3}").is_err());
        assert!(AgentMemory::load("not json").is_err());
    }

    fn names() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["juice", "chips", "wine", "milk", "apple", "cupcake"]).prop_map(str::to_string)
    }

    prop_compose! {
        fn arb_fact()(object in names(), c in prop::option::of(names()), r in 0usize..4,
                      episode in 1u32..4, valid in any::<bool>()) -> KeyFact {
            KeyFact { object, container: c, room: Room::ALL[r], episode, valid }
        }
    }

    prop_compose! {
        fn arb_memory()(
            facts in prop::option::of(prop::collection::vec(arb_fact(), 0..6)),
            confirmed in prop::collection::vec(prop::collection::btree_set(names(), 0..3), 0..3),
            weights in prop::collection::vec(0.0f64..1.0, 0..8),
            tags in prop::collection::vec(("[a-z]{1,8}", 0u32..20), 0..4),
            log in prop::collection::vec(("[ -~]{0,30}", any::<bool>()), 0..6),
            actions in prop::collection::vec("[ -~]{0,20}", 0..5),
            entropy in prop::collection::vec(0.0f64..5.0, 0..4),
        ) -> AgentMemory {
            let spec = builtin_task("snack-m").unwrap();
            let mut memory = AgentMemory::new(&spec, facts.is_some());
            memory.key_facts = facts;
            memory.confirmed_by_episode = confirmed.clone();
            memory.mental.past_episode_goals = confirmed;
            memory.mental.hypotheses.truncate(weights.len());
            for (h, w) in memory.mental.hypotheses.iter_mut().zip(&weights) {
                h.weight = *w;
            }
            memory.mental.hints = tags
                .into_iter()
                .map(|(tag, turn)| Hint { tag, turn, confirmed_at: BTreeSet::new() })
                .collect();
            memory.mental.entropy_trace = entropy;
            memory.dialogue_log = log
                .into_iter()
                .map(|(t, agent)| if agent { ChatExchange::agent(t) } else { ChatExchange::user(t) })
                .collect();
            memory.action_log = actions;
            memory
        }
    }

    proptest! {
        #[test]
        fn persist_then_load_is_identity(memory in arb_memory()) {
            let doc = memory.persist();
            prop_assert_eq!(AgentMemory::load(&doc).unwrap(), memory);
        }
    }
}
