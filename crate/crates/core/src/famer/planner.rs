//! Action filtering and the priority planner.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::memory::AgentMemory;
use super::mental::{CommBudget, MentalModel};
use crate::seed::{self, salt};
use crate::tasks::TaskSpec;
use crate::world::{Action, Location, ObjectId, ObjectKind, Observation, Room, HAND_CAPACITY};

/// Hypotheses whose members stay actionable in [`filter_actions`].
pub const TOP_K: usize = 3;
/// Marginal above which an unconfirmed candidate is fetched while waiting
/// to ask.
pub const PREFETCH_MIN: f64 = 0.3;

/// Where an object was last seen this episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sighting {
    pub room: Room,
    pub container: Option<String>,
}

/// Working knowledge for a single episode; rebuilt at every episode start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeBelief {
    pub episode: u32,
    pub seen: BTreeMap<String, Sighting>,
    /// Container class → (room, opened).
    pub containers: BTreeMap<String, (Room, bool)>,
    pub visited: BTreeSet<Room>,
    pub delivered: BTreeSet<String>,
    /// Exploration order of rooms.
    pub room_order: Vec<Room>,
    pub budget: CommBudget,
    /// Goal names in the most recent question.
    pub last_guess: BTreeSet<String>,
    /// Index into the dialogue log where this episode begins.
    pub dialogue_start: usize,
}

impl EpisodeBelief {
    pub fn new(episode: u32, seed: u64, dialogue_start: usize) -> Self {
        let mut room_order = Room::ALL.to_vec();
        room_order.shuffle(&mut seed::rng(seed::mix(seed, u64::from(episode)), salt::AGENT));
        EpisodeBelief {
            episode,
            seen: BTreeMap::new(),
            containers: BTreeMap::new(),
            visited: BTreeSet::new(),
            delivered: BTreeSet::new(),
            room_order,
            budget: CommBudget::default(),
            last_guess: BTreeSet::new(),
            dialogue_start,
        }
    }

    /// Folds what is visible now into the belief.
    pub fn observe(&mut self, obs: &Observation, spec: &TaskSpec) {
        self.visited.insert(obs.room);
        for v in &obs.visible_objects {
            if v.kind == ObjectKind::Container {
                self.containers.insert(v.class_name.clone(), (obs.room, v.is_open));
            }
        }
        // Anything in a container we can see into, or in the open, that is
        // no longer visible has moved.
        self.seen.retain(|class, s| {
            if s.room != obs.room || obs.find_class(class).is_some() {
                return true;
            }
            match &s.container {
                None => false,
                Some(c) => !obs.find_class(c).is_some_and(|v| v.is_open),
            }
        });
        for v in obs.visible_objects.iter().filter(|v| v.kind == ObjectKind::Graspable) {
            let container = match v.location {
                Location::Inside(c) | Location::On(c) => obs.class_of(c).map(str::to_string),
                _ => None,
            };
            if container.as_deref() == Some(spec.target_surface.as_str()) {
                self.seen.remove(&v.class_name);
                continue;
            }
            self.seen.insert(v.class_name.clone(), Sighting { room: obs.room, container });
        }
        for (_, class) in &obs.held {
            self.seen.remove(class);
        }
    }

    fn locate(&self, class: &str, memory: &AgentMemory) -> Option<Sighting> {
        self.seen.get(class).cloned().or_else(|| {
            memory.fact(class).map(|f| Sighting {
                room: f.room,
                container: f.container.clone(),
            })
        })
    }
}

/// Drops grabs and placements of objects no plausible goal set contains.
/// Navigation, opening, messages and waiting are always kept.
pub fn filter_actions(actions: &[Action], obs: &Observation, mental: &MentalModel, spec: &TaskSpec) -> Vec<Action> {
    let allowed: BTreeSet<String> = if mental.hypotheses.is_empty() {
        spec.potential_goals
            .iter()
            .filter(|g| !mental.denied.contains(*g))
            .cloned()
            .collect()
    } else {
        let mut top = mental.top_goals(TOP_K);
        top.extend(mental.confirmed.iter().cloned());
        top
    };
    actions
        .iter()
        .filter(|a| match a {
            Action::PutOn(_, s) if obs.class_of(*s) != Some(spec.target_surface.as_str()) => true,
            Action::Grab(o) | Action::PutOn(o, _) => obs.class_of(*o).is_some_and(|c| allowed.contains(c)),
            _ => true,
        })
        .cloned()
        .collect()
}

/// Picks the next action by fixed priority: deliver, fetch a known goal,
/// ask, carry a full load home, explore.
pub fn plan_next(
    obs: &Observation,
    mental: &MentalModel,
    memory: &mut AgentMemory,
    belief: &mut EpisodeBelief,
    spec: &TaskSpec,
    question: Option<String>,
) -> Action {
    let known = mental.known_goals();
    let target_room = spec.target_room();
    let held_goals: Vec<ObjectId> = obs
        .held
        .iter()
        .filter(|(_, c)| known.contains(c))
        .map(|(id, _)| *id)
        .collect();

    if obs.room == target_room {
        if let (Some(first), Some(surface)) = (held_goals.first(), obs.find_class(&spec.target_surface)) {
            return Action::PutOn(*first, surface.id);
        }
    }
    if let Some(action) = release_denied(obs, mental, spec) {
        return action;
    }

    let hands_full = obs.held.len() >= HAND_CAPACITY;
    let held_classes: BTreeSet<&str> = obs.held.iter().map(|(_, c)| c.as_str()).collect();
    let remaining: Vec<&String> = spec
        .potential_goals
        .iter()
        .filter(|g| known.contains(*g) && !belief.delivered.contains(*g) && !held_classes.contains(g.as_str()))
        .collect();

    if hands_full && !held_goals.is_empty() {
        return Action::GoToRoom(target_room);
    }
    if !hands_full {
        if let Some(action) = fetch(obs, target_room, &remaining, memory, belief) {
            return action;
        }
    }
    if let Some(text) = question {
        return Action::Send(text);
    }
    let likely = likely_goals(mental, spec, &known, belief);
    let pending: Vec<&String> = likely.iter().filter(|g| !held_classes.contains(g.as_str())).collect();
    if !hands_full {
        if let Some(action) = fetch(obs, target_room, &pending, memory, belief) {
            return action;
        }
    }
    if !likely.is_empty() && pending.is_empty() && remaining.is_empty() && obs.room != target_room {
        return Action::GoToRoom(target_room);
    }
    if !likely.is_empty() && pending.is_empty() && remaining.is_empty() {
        return Action::Wait;
    }
    let unlocated = remaining.iter().any(|g| belief.locate(g, memory).is_none());
    if !held_goals.is_empty() && !unlocated && known.len() >= spec.goal_count {
        return Action::GoToRoom(target_room);
    }
    if let Some(action) = explore(obs, belief) {
        return action;
    }
    if !obs.held.is_empty() && obs.room != target_room {
        return Action::GoToRoom(target_room);
    }
    Action::Wait
}

/// The most probable unsettled candidates, one per goal still unknown.
fn likely_goals(
    mental: &MentalModel,
    spec: &TaskSpec,
    known: &BTreeSet<String>,
    belief: &EpisodeBelief,
) -> Vec<String> {
    let open = spec.goal_count.saturating_sub(known.len());
    let mut marginals: Vec<(String, f64)> = mental
        .marginals(spec)
        .into_iter()
        .filter(|(g, p)| {
            *p >= PREFETCH_MIN
                && !known.contains(g)
                && !mental.denied.contains(g)
                && !belief.delivered.contains(g)
        })
        .collect();
    marginals.sort_by(|a, b| b.1.total_cmp(&a.1));
    marginals.into_iter().take(open.min(HAND_CAPACITY)).map(|(g, _)| g).collect()
}

/// Puts a held object the user turned down on any other surface in reach.
fn release_denied(obs: &Observation, mental: &MentalModel, spec: &TaskSpec) -> Option<Action> {
    let (id, _) = obs.held.iter().find(|(_, c)| mental.denied.contains(c))?;
    let surface = obs
        .visible_objects
        .iter()
        .find(|v| v.kind == ObjectKind::Surface && v.class_name != spec.target_surface)?;
    Some(Action::PutOn(*id, surface.id))
}

fn fetch(
    obs: &Observation,
    target_room: Room,
    remaining: &[&String],
    memory: &mut AgentMemory,
    belief: &mut EpisodeBelief,
) -> Option<Action> {
    let mut candidates: Vec<(&String, Sighting)> = Vec::new();
    for g in remaining {
        if let Some(s) = belief.locate(g, memory) {
            candidates.push((g, s));
        }
    }
    // Current room first, then the room that fills the most free hands;
    // the target room is passed through on every delivery anyway.
    let free = HAND_CAPACITY.saturating_sub(obs.held.len());
    let mut per_room: BTreeMap<Room, usize> = BTreeMap::new();
    for (_, s) in &candidates {
        *per_room.entry(s.room).or_default() += 1;
    }
    candidates.sort_by_key(|(_, s)| {
        (s.room != obs.room, std::cmp::Reverse(per_room[&s.room].min(free)), s.room == target_room)
    });
    for (class, sighting) in candidates {
        if sighting.room != obs.room {
            return Some(Action::GoToRoom(sighting.room));
        }
        if let Some(v) = obs.find_class(class) {
            if v.kind == ObjectKind::Graspable {
                return Some(Action::Grab(v.id));
            }
        }
        if let Some(c) = &sighting.container {
            if let Some(cv) = obs.find_class(c) {
                if cv.kind == ObjectKind::Container && !cv.is_open {
                    return Some(Action::Open(cv.id));
                }
            }
        }
        // Not where we thought.
        belief.seen.remove(class.as_str());
        memory.invalidate(class);
    }
    None
}

fn explore(obs: &Observation, belief: &EpisodeBelief) -> Option<Action> {
    if let Some(c) = obs
        .visible_objects
        .iter()
        .find(|v| v.kind == ObjectKind::Container && !v.is_open)
    {
        return Some(Action::Open(c.id));
    }
    if let Some(room) = belief.room_order.iter().find(|r| !belief.visited.contains(r)) {
        return Some(Action::GoToRoom(*room));
    }
    belief
        .room_order
        .iter()
        .find(|r| **r != obs.room && belief.containers.values().any(|(cr, open)| cr == *r && !open))
        .map(|r| Action::GoToRoom(*r))
}
