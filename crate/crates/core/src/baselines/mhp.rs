//! Goal-sampling planner. Commits to a sampled goal subset and picks
//! actions by Monte-Carlo rollouts on a believed world; never talks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SuccessMemory;
use crate::agent::{Agent, AgentError, StepOutcome};
use crate::seed::{self, salt};
use crate::tasks::TaskSpec;
use crate::world::{
    legal_actions, Action, Location, ObjectId, ObjectKind, ObjectRecord, Observation, Room, SceneState,
    TransitionEvent, HAND_CAPACITY,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhpConfig {
    pub rollout_depth: u32,
    pub playouts: u32,
    pub discount: f64,
    /// Probability the rollout policy follows its greedy choice.
    pub greedy: f64,
}

impl Default for MhpConfig {
    fn default() -> Self {
        MhpConfig {
            rollout_depth: 20,
            playouts: 64,
            discount: 0.95,
            greedy: 0.9,
        }
    }
}

/// Sampling weight per candidate: (1 + 3·hits) / (1 + misses).
pub fn subset_weights(candidates: &[String], memory: &SuccessMemory) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| (1.0 + 3.0 * memory.hits(c) as f64) / (1.0 + memory.misses(c) as f64))
        .collect()
}

/// Draws `n` distinct candidates, each draw proportional to weight.
pub fn sample_subset<R: Rng>(candidates: &[String], memory: &SuccessMemory, n: usize, rng: &mut R) -> BTreeSet<String> {
    let mut pool: Vec<(String, f64)> = candidates
        .iter()
        .cloned()
        .zip(subset_weights(candidates, memory))
        .collect();
    let mut out = BTreeSet::new();
    while out.len() < n && !pool.is_empty() {
        let idx = {
            let indices: Vec<usize> = (0..pool.len()).collect();
            *indices.choose_weighted(rng, |&i| pool[i].1).expect("positive weights")
        };
        out.insert(pool.remove(idx).0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Spot {
    Open(Room),
    Container(ObjectId),
}

#[derive(Clone)]
pub struct MhpAgent {
    spec: TaskSpec,
    config: MhpConfig,
    seed: u64,
    success: SuccessMemory,
    episode: u32,
    rng: ChaCha8Rng,
    skeleton: SceneState,
    subset: BTreeSet<String>,
    excluded: BTreeSet<String>,
    delivered: BTreeSet<String>,
    known: BTreeMap<ObjectId, (String, Location)>,
    visited: BTreeSet<Room>,
    opened: BTreeSet<ObjectId>,
    guesses: BTreeMap<String, Spot>,
}

impl MhpAgent {
    pub fn new(spec: TaskSpec, config: MhpConfig, seed: u64) -> Self {
        let skeleton = SceneState::skeleton(&spec);
        MhpAgent {
            spec,
            config,
            seed,
            success: SuccessMemory::default(),
            episode: 0,
            rng: seed::rng(seed, salt::AGENT),
            skeleton,
            subset: BTreeSet::new(),
            excluded: BTreeSet::new(),
            delivered: BTreeSet::new(),
            known: BTreeMap::new(),
            visited: BTreeSet::new(),
            opened: BTreeSet::new(),
            guesses: BTreeMap::new(),
        }
    }

    pub fn subset(&self) -> &BTreeSet<String> {
        &self.subset
    }

    pub fn success_memory(&self) -> &SuccessMemory {
        &self.success
    }

    fn pending(&self) -> BTreeSet<String> {
        self.subset.difference(&self.delivered).cloned().collect()
    }

    fn refill(&mut self) {
        let pool: Vec<String> = self
            .spec
            .potential_goals
            .iter()
            .filter(|g| !self.subset.contains(*g) && !self.excluded.contains(*g) && !self.delivered.contains(*g))
            .cloned()
            .collect();
        let need = self.spec.goal_count.saturating_sub(self.subset.len());
        let extra = sample_subset(&pool, &self.success, need, &mut self.rng);
        self.subset.extend(extra);
    }

    fn observe(&mut self, obs: &Observation) {
        self.visited.insert(obs.room);
        for v in &obs.visible_objects {
            match v.kind {
                ObjectKind::Container if v.is_open => {
                    self.opened.insert(v.id);
                }
                ObjectKind::Graspable => {
                    self.known.insert(v.id, (v.class_name.clone(), v.location));
                }
                _ => {}
            }
        }
        for (id, class) in &obs.held {
            self.known.insert(*id, (class.clone(), Location::Held));
        }
    }

    fn unexplored(&self) -> Vec<Spot> {
        let rooms = Room::ALL.iter().filter(|r| !self.visited.contains(r)).map(|r| Spot::Open(*r));
        let containers = self
            .skeleton
            .objects
            .values()
            .filter(|o| o.kind == ObjectKind::Container && !self.opened.contains(&o.id))
            .map(|o| Spot::Container(o.id));
        rooms.chain(containers).collect()
    }

    fn known_class(&self, class: &str) -> bool {
        self.known.values().any(|(c, _)| c == class)
    }

    /// Keeps each unseen subset member at a guessed spot until that spot
    /// has been searched.
    fn refresh_guesses(&mut self) {
        let unexplored = self.unexplored();
        let pending = self.pending();
        self.guesses.retain(|c, s| pending.contains(c) && unexplored.contains(s));
        for class in pending {
            if self.known_class(&class) || self.guesses.contains_key(&class) {
                continue;
            }
            if let Some(spot) = unexplored.choose(&mut self.rng) {
                self.guesses.insert(class, *spot);
            }
        }
    }

    /// The world as the agent imagines it: fixtures, everything seen,
    /// and unseen subset members at their guessed spots.
    fn sampled_world(&self, obs: &Observation) -> SceneState {
        let mut world = self.skeleton.clone();
        world.agent_room = obs.room;
        world.opened_containers = self.opened.clone();
        world.step_count = obs.step_count;
        world.agent_hands = obs.held.iter().map(|(id, _)| *id).collect();
        for (id, (class, location)) in &self.known {
            world.objects.insert(
                *id,
                ObjectRecord {
                    id: *id,
                    class_name: class.clone(),
                    kind: ObjectKind::Graspable,
                    location: *location,
                    properties: BTreeSet::new(),
                },
            );
        }
        let mut next = world.objects.keys().last().map_or(1, |k| k.0 + 1).max(1_000_000);
        for (class, spot) in &self.guesses {
            let id = ObjectId(next);
            next += 1;
            let location = match spot {
                Spot::Open(r) => Location::InRoom(*r),
                Spot::Container(c) => Location::Inside(*c),
            };
            world.objects.insert(
                id,
                ObjectRecord {
                    id,
                    class_name: class.clone(),
                    kind: ObjectKind::Graspable,
                    location,
                    properties: BTreeSet::new(),
                },
            );
        }
        world
    }

    fn rollout(&mut self, world: &SceneState, first: &Action, pending: &BTreeSet<String>) -> f64 {
        let mut state = world.clone();
        let mut pending = pending.clone();
        let mut total = 0.0;
        let mut discount = 1.0;
        let share = 1.0 / self.spec.goal_count as f64;
        let mut action = first.clone();
        for _ in 0..self.config.rollout_depth {
            if let TransitionEvent::Placed { class_name, surface_class, .. } = state.step(&action) {
                if surface_class == self.spec.target_surface && pending.remove(&class_name) {
                    total += discount * share;
                }
            }
            if pending.is_empty() {
                break;
            }
            discount *= self.config.discount;
            action = if self.rng.random_bool(self.config.greedy) {
                greedy(&state, &pending, &self.spec)
            } else {
                let options: Vec<Action> = legal_actions(&state)
                    .into_iter()
                    .filter(|a| !matches!(a, Action::Send(_)))
                    .collect();
                options.choose(&mut self.rng).cloned().unwrap_or(Action::Wait)
            };
        }
        total
    }
}

/// Shortest-path behaviour in a fully known world: deliver what is held,
/// otherwise go get the next pending object.
fn greedy(world: &SceneState, pending: &BTreeSet<String>, spec: &TaskSpec) -> Action {
    let target_room = spec.target_room();
    let held_pending: Vec<ObjectId> = world
        .agent_hands
        .iter()
        .copied()
        .filter(|h| world.objects.get(h).is_some_and(|o| pending.contains(&o.class_name)))
        .collect();
    if let Some(first) = held_pending.first() {
        if world.agent_room == target_room {
            if let Some(surface) = world.find_class(&spec.target_surface) {
                return Action::PutOn(*first, surface.id);
            }
        }
    }
    let hands_full = world.agent_hands.len() >= HAND_CAPACITY;
    if !hands_full {
        for o in world.objects.values() {
            if o.kind != ObjectKind::Graspable || !pending.contains(&o.class_name) || o.location == Location::Held {
                continue;
            }
            if matches!(o.location, Location::On(s) if world.objects.get(&s).is_some_and(|s| s.class_name == spec.target_surface)) {
                continue;
            }
            let Some(room) = world.room_of(o.id) else { continue };
            if room != world.agent_room {
                return Action::GoToRoom(room);
            }
            if let Location::Inside(c) = o.location {
                if !world.opened_containers.contains(&c) {
                    return Action::Open(c);
                }
            }
            return Action::Grab(o.id);
        }
    }
    if !held_pending.is_empty() && world.agent_room != target_room {
        return Action::GoToRoom(target_room);
    }
    if hands_full && held_pending.is_empty() {
        // Hands are clogged with things nobody asked for; set one down
        // somewhere harmless.
        let spare = world
            .objects
            .values()
            .filter(|o| o.kind == ObjectKind::Surface && o.class_name != spec.target_surface);
        for s in spare {
            if world.is_visible(s.id) {
                return Action::PutOn(world.agent_hands[0], s.id);
            }
            if let Some(room) = world.room_of(s.id) {
                return Action::GoToRoom(room);
            }
        }
    }
    Action::Wait
}

impl Agent for MhpAgent {
    fn kind(&self) -> &str {
        "mhp"
    }

    fn begin_episode(&mut self, episode: u32) {
        self.episode = episode;
        self.rng = seed::rng(seed::mix(self.seed, u64::from(episode)), salt::AGENT);
        self.subset.clear();
        self.excluded.clear();
        self.delivered.clear();
        self.known.clear();
        self.visited.clear();
        self.opened.clear();
        self.guesses.clear();
        self.refill();
    }

    fn act(&mut self, obs: &Observation, legal: &[Action]) -> Result<Action, AgentError> {
        self.observe(obs);
        self.refresh_guesses();
        let pending = self.pending();
        let world = self.sampled_world(obs);
        let candidates: Vec<&Action> = legal.iter().filter(|a| !matches!(a, Action::Send(_))).collect();
        if candidates.is_empty() {
            return Ok(Action::Wait);
        }
        let per_action = self.config.playouts.div_ceil(candidates.len() as u32).max(2);
        let mut best: Option<(f64, &Action)> = None;
        for action in &candidates {
            let mut sum = 0.0;
            for _ in 0..per_action {
                sum += self.rollout(&world, action, &pending);
            }
            let mean = sum / f64::from(per_action);
            if best.is_none_or(|(b, _)| mean > b) {
                best = Some((mean, action));
            }
        }
        let chosen = match best {
            Some((v, a)) if v > 0.0 => a.clone(),
            _ => greedy(&world, &pending, &self.spec),
        };
        Ok(if legal.contains(&chosen) { chosen } else { Action::Wait })
    }

    fn feedback(&mut self, outcome: &StepOutcome<'_>) {
        let TransitionEvent::Placed { class_name, surface_class, .. } = outcome.event else {
            return;
        };
        if *surface_class != self.spec.target_surface {
            return;
        }
        let Some(delta) = outcome.score_delta else { return };
        if delta.0 > num_rational::Ratio::from_integer(0) {
            self.success.record(self.episode, class_name, true);
            self.delivered.insert(class_name.clone());
        } else if delta.0 < num_rational::Ratio::from_integer(0) {
            self.success.record(self.episode, class_name, false);
            self.subset.remove(class_name);
            self.excluded.insert(class_name.clone());
            self.refill();
        }
    }
}
