//! Deterministic, partially observable symbolic household.
//!
//! The world is a flat map of objects. Each object sits in exactly one
//! place: loose in a room, inside a container, on a surface, or in the
//! agent's hands. Containers start closed and hide their contents until
//! opened. Every action, legal or not, advances the step counter by one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, salt};
use crate::tasks::{TaskError, TaskSpec};

/// Maximum number of objects the agent can carry.
pub const HAND_CAPACITY: usize = 2;

/// Room the agent starts every episode in.
pub const START_ROOM: Room = Room::LivingRoom;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scene document: {0}")]
    Format(#[from] serde_json::Error),
    #[error("scene violates an invariant: {0}")]
    Invariant(String),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Room {
    Kitchen,
    LivingRoom,
    Bedroom,
    Bathroom,
}

impl Room {
    pub const ALL: [Room; 4] = [Room::Kitchen, Room::LivingRoom, Room::Bedroom, Room::Bathroom];

    pub fn name(self) -> &'static str {
        match self {
            Room::Kitchen => "kitchen",
            Room::LivingRoom => "livingroom",
            Room::Bedroom => "bedroom",
            Room::Bathroom => "bathroom",
        }
    }

    /// Numeric id used in the `<name> (id)` action notation.
    pub fn id(self) -> u32 {
        match self {
            Room::Kitchen => 1,
            Room::LivingRoom => 2,
            Room::Bedroom => 3,
            Room::Bathroom => 4,
        }
    }
}

impl fmt::Display for Room {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Room {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Room::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown room `{s}`"))
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Graspable,
    Container,
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "at")]
pub enum Location {
    InRoom(Room),
    Inside(ObjectId),
    On(ObjectId),
    Held,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub class_name: String,
    pub kind: ObjectKind,
    pub location: Location,
    #[serde(default)]
    pub properties: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneState {
    pub rooms: Vec<Room>,
    pub objects: BTreeMap<ObjectId, ObjectRecord>,
    pub agent_room: Room,
    pub agent_hands: Vec<ObjectId>,
    pub opened_containers: BTreeSet<ObjectId>,
    pub step_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action", content = "args")]
pub enum Action {
    GoToRoom(Room),
    Open(ObjectId),
    Grab(ObjectId),
    PutOn(ObjectId, ObjectId),
    Send(String),
    Wait,
}

impl Action {
    /// The `Send` entry reported by [`legal_actions`]; the agent supplies
    /// the real text.
    pub fn send_placeholder() -> Action {
        Action::Send("[message]".to_string())
    }

    /// Object the action manipulates, if any.
    pub fn object(&self) -> Option<ObjectId> {
        match self {
            Action::Open(o) | Action::Grab(o) | Action::PutOn(o, _) => Some(*o),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownObject,
    AlreadyThere,
    NotAContainer,
    AlreadyOpen,
    NotGraspable,
    AlreadyHeld,
    HandsFull,
    NotVisible,
    NotHeld,
    NotASurface,
    EmptyMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum TransitionEvent {
    Moved {
        room: Room,
    },
    Opened {
        container: ObjectId,
    },
    Grabbed {
        object: ObjectId,
    },
    Placed {
        object: ObjectId,
        class_name: String,
        surface: ObjectId,
        surface_class: String,
    },
    MessageSent {
        text: String,
    },
    Waited,
    Rejected {
        reason: RejectReason,
    },
}

impl TransitionEvent {
    pub fn is_rejected(&self) -> bool {
        matches!(self, TransitionEvent::Rejected { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: ObjectId,
    pub class_name: String,
    pub kind: ObjectKind,
    pub location: Location,
    /// Only meaningful for containers.
    #[serde(default)]
    pub is_open: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub room: Room,
    pub visible_objects: Vec<VisibleObject>,
    /// Held objects with their class names.
    pub held: Vec<(ObjectId, String)>,
    pub incoming_message: Option<String>,
    pub step_count: u32,
}

impl Observation {
    pub fn find(&self, id: ObjectId) -> Option<&VisibleObject> {
        self.visible_objects.iter().find(|v| v.id == id)
    }

    pub fn find_class(&self, class_name: &str) -> Option<&VisibleObject> {
        self.visible_objects.iter().find(|v| v.class_name == class_name)
    }

    pub fn class_of(&self, id: ObjectId) -> Option<&str> {
        self.find(id)
            .map(|v| v.class_name.as_str())
            .or_else(|| self.held.iter().find(|(h, _)| *h == id).map(|(_, c)| c.as_str()))
    }
}

impl SceneState {
    /// Scene with rooms and fixtures only, using the same ids
    /// [`build_scene`] assigns.
    pub fn skeleton(task: &TaskSpec) -> SceneState {
        let mut objects = BTreeMap::new();
        let mut next = FIRST_OBJECT_ID;
        let fixtures = task
            .containers
            .iter()
            .map(|f| (f, ObjectKind::Container))
            .chain(task.surfaces.iter().map(|f| (f, ObjectKind::Surface)));
        for (fixture, kind) in fixtures {
            let id = ObjectId(next);
            next += 1;
            objects.insert(
                id,
                ObjectRecord {
                    id,
                    class_name: fixture.class_name.clone(),
                    kind,
                    location: Location::InRoom(fixture.room),
                    properties: BTreeSet::new(),
                },
            );
        }
        SceneState {
            rooms: Room::ALL.to_vec(),
            objects,
            agent_room: START_ROOM,
            agent_hands: Vec::new(),
            opened_containers: BTreeSet::new(),
            step_count: 0,
        }
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.objects.get(&id)
    }

    pub fn find_class(&self, class_name: &str) -> Option<&ObjectRecord> {
        self.objects.values().find(|o| o.class_name == class_name)
    }

    /// Room an object is ultimately in; held objects travel with the agent.
    pub fn room_of(&self, id: ObjectId) -> Option<Room> {
        let mut current = self.objects.get(&id)?;
        // Bounded by the object count so a malformed cyclic document cannot hang.
        for _ in 0..=self.objects.len() {
            match current.location {
                Location::InRoom(room) => return Some(room),
                Location::Held => return Some(self.agent_room),
                Location::Inside(parent) | Location::On(parent) => {
                    current = self.objects.get(&parent)?;
                }
            }
        }
        None
    }

    /// Visible from where the agent stands: same room and not behind a
    /// closed container.
    pub fn is_visible(&self, id: ObjectId) -> bool {
        let Some(mut current) = self.objects.get(&id) else {
            return false;
        };
        for _ in 0..=self.objects.len() {
            match current.location {
                Location::Held => return false,
                Location::InRoom(room) => return room == self.agent_room,
                Location::Inside(parent) => {
                    if !self.opened_containers.contains(&parent) {
                        return false;
                    }
                    match self.objects.get(&parent) {
                        Some(p) => current = p,
                        None => return false,
                    }
                }
                Location::On(parent) => match self.objects.get(&parent) {
                    Some(p) => current = p,
                    None => return false,
                },
            }
        }
        false
    }

    /// Applies an action in place and reports what happened.
    pub fn step(&mut self, action: &Action) -> TransitionEvent {
        self.step_count += 1;
        match self.check(action) {
            Err(reason) => TransitionEvent::Rejected { reason },
            Ok(()) => self.commit(action),
        }
    }

    fn check(&self, action: &Action) -> Result<(), RejectReason> {
        use RejectReason::*;
        match action {
            Action::Wait => Ok(()),
            Action::Send(text) => {
                if text.trim().is_empty() {
                    Err(EmptyMessage)
                } else {
                    Ok(())
                }
            }
            Action::GoToRoom(room) => {
                if *room == self.agent_room {
                    Err(AlreadyThere)
                } else if !self.rooms.contains(room) {
                    Err(NotVisible)
                } else {
                    Ok(())
                }
            }
            Action::Open(id) => {
                let obj = self.objects.get(id).ok_or(UnknownObject)?;
                if obj.kind != ObjectKind::Container {
                    Err(NotAContainer)
                } else if self.opened_containers.contains(id) {
                    Err(AlreadyOpen)
                } else if !self.is_visible(*id) {
                    Err(NotVisible)
                } else {
                    Ok(())
                }
            }
            Action::Grab(id) => {
                let obj = self.objects.get(id).ok_or(UnknownObject)?;
                if obj.kind != ObjectKind::Graspable {
                    Err(NotGraspable)
                } else if self.agent_hands.contains(id) {
                    Err(AlreadyHeld)
                } else if self.agent_hands.len() >= HAND_CAPACITY {
                    Err(HandsFull)
                } else if !self.is_visible(*id) {
                    Err(NotVisible)
                } else {
                    Ok(())
                }
            }
            Action::PutOn(id, surface) => {
                self.objects.get(id).ok_or(UnknownObject)?;
                let surf = self.objects.get(surface).ok_or(UnknownObject)?;
                if !self.agent_hands.contains(id) {
                    Err(NotHeld)
                } else if surf.kind != ObjectKind::Surface {
                    Err(NotASurface)
                } else if !self.is_visible(*surface) {
                    Err(NotVisible)
                } else {
                    Ok(())
                }
            }
        }
    }

    fn commit(&mut self, action: &Action) -> TransitionEvent {
        match action {
            Action::Wait => TransitionEvent::Waited,
            Action::Send(text) => TransitionEvent::MessageSent { text: text.clone() },
            Action::GoToRoom(room) => {
                self.agent_room = *room;
                TransitionEvent::Moved { room: *room }
            }
            Action::Open(id) => {
                self.opened_containers.insert(*id);
                TransitionEvent::Opened { container: *id }
            }
            Action::Grab(id) => {
                self.agent_hands.push(*id);
                if let Some(obj) = self.objects.get_mut(id) {
                    obj.location = Location::Held;
                }
                TransitionEvent::Grabbed { object: *id }
            }
            Action::PutOn(id, surface) => {
                self.agent_hands.retain(|h| h != id);
                let surface_class = self.objects[surface].class_name.clone();
                let obj = self.objects.get_mut(id).expect("checked");
                obj.location = Location::On(*surface);
                TransitionEvent::Placed {
                    object: *id,
                    class_name: obj.class_name.clone(),
                    surface: *surface,
                    surface_class,
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenes always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let scene: SceneState = serde_json::from_str(text)?;
        scene.check_invariants().map_err(WorldError::Invariant)?;
        Ok(scene)
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.agent_hands.len() > HAND_CAPACITY {
            return Err(format!("{} objects in hands", self.agent_hands.len()));
        }
        for (id, obj) in &self.objects {
            if *id != obj.id {
                return Err(format!("object keyed {id} carries id {}", obj.id));
            }
            if obj.class_name.is_empty() {
                return Err(format!("object {id} has empty class name"));
            }
            let held = matches!(obj.location, Location::Held);
            if held != self.agent_hands.contains(id) {
                return Err(format!("object {id} held flag disagrees with hands"));
            }
            if held && obj.kind != ObjectKind::Graspable {
                return Err(format!("fixture {id} is held"));
            }
            match obj.location {
                Location::Inside(p) if self.objects.get(&p).map(|o| o.kind) != Some(ObjectKind::Container) => {
                    return Err(format!("object {id} inside non-container {p}"));
                }
                Location::On(p) if self.objects.get(&p).map(|o| o.kind) != Some(ObjectKind::Surface) => {
                    return Err(format!("object {id} on non-surface {p}"));
                }
                _ => {}
            }
            if self.room_of(*id).is_none() {
                return Err(format!("object {id} has a cyclic or dangling location"));
            }
        }
        Ok(())
    }
}

const FIRST_OBJECT_ID: u32 = 100;

/// Builds the scene for a task. Placement is a pure function of `seed`:
/// each graspable object lands inside a random container or loose in a
/// random room with equal probability.
pub fn build_scene(task: &TaskSpec, seed: u64) -> Result<SceneState, TaskError> {
    task.validate()?;
    let mut scene = SceneState::skeleton(task);
    let containers: Vec<ObjectId> = scene
        .objects
        .values()
        .filter(|o| o.kind == ObjectKind::Container)
        .map(|o| o.id)
        .collect();
    let mut rng = seed::rng(seed, salt::SCENE);
    let mut next = scene.objects.keys().last().map_or(FIRST_OBJECT_ID, |k| k.0 + 1);
    for class in task.potential_goals.iter().chain(&task.distractors) {
        let location = if rng.random_bool(0.5) {
            Location::Inside(*containers.choose(&mut rng).expect("validated ≥2 containers"))
        } else {
            Location::InRoom(*Room::ALL.choose(&mut rng).expect("rooms"))
        };
        let id = ObjectId(next);
        next += 1;
        scene.objects.insert(
            id,
            ObjectRecord {
                id,
                class_name: class.clone(),
                kind: ObjectKind::Graspable,
                location,
                properties: task.property_table.get(class).cloned().unwrap_or_default(),
            },
        );
    }
    Ok(scene)
}

pub fn apply_action(state: &SceneState, action: &Action) -> (SceneState, TransitionEvent) {
    let mut next = state.clone();
    let event = next.step(action);
    (next, event)
}

pub fn observe(state: &SceneState) -> Observation {
    let visible_objects = state
        .objects
        .values()
        .filter(|o| state.is_visible(o.id))
        .map(|o| VisibleObject {
            id: o.id,
            class_name: o.class_name.clone(),
            kind: o.kind,
            location: o.location,
            is_open: state.opened_containers.contains(&o.id),
        })
        .collect();
    let held = state
        .agent_hands
        .iter()
        .map(|id| (*id, state.objects[id].class_name.clone()))
        .collect();
    Observation {
        room: state.agent_room,
        visible_objects,
        held,
        incoming_message: None,
        step_count: state.step_count,
    }
}

/// Every action that `apply_action` would accept, plus `Send` and `Wait`.
pub fn legal_actions(state: &SceneState) -> Vec<Action> {
    let mut actions: Vec<Action> = state
        .rooms
        .iter()
        .filter(|r| **r != state.agent_room)
        .map(|r| Action::GoToRoom(*r))
        .collect();
    let visible: Vec<&ObjectRecord> = state
        .objects
        .values()
        .filter(|o| state.is_visible(o.id))
        .collect();
    for obj in &visible {
        if obj.kind == ObjectKind::Container && !state.opened_containers.contains(&obj.id) {
            actions.push(Action::Open(obj.id));
        }
    }
    if state.agent_hands.len() < HAND_CAPACITY {
        for obj in &visible {
            if obj.kind == ObjectKind::Graspable {
                actions.push(Action::Grab(obj.id));
            }
        }
    }
    for held in &state.agent_hands {
        for surface in visible.iter().filter(|o| o.kind == ObjectKind::Surface) {
            actions.push(Action::PutOn(*held, surface.id));
        }
    }
    actions.push(Action::send_placeholder());
    actions.push(Action::Wait);
    actions
}
