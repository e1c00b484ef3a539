//! Task definitions, value spaces, goal predicates and the score engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::seed::{self, salt};
use crate::world::{Room, TransitionEvent};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task `{task}`: {reason}")]
    Invalid { task: String, reason: String },
    #[error("expected a Placed event, got {0}")]
    NotAPlacement(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("reading task file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing task file: {0}")]
    Parse(String),
}

/// A piece of furniture that never moves: either an openable container
/// or a surface objects can be put on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub class_name: String,
    pub room: Room,
}

impl Fixture {
    fn new(class_name: &str, room: Room) -> Self {
        Fixture {
            class_name: class_name.to_string(),
            room,
        }
    }
}

/// A named preference dimension and the goal objects it makes attractive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueDimension {
    pub name: String,
    pub affects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Short identifier used on the command line, e.g. `snack-m`.
    pub id: String,
    pub name: String,
    pub potential_goals: Vec<String>,
    pub goal_count: usize,
    pub max_steps: u32,
    pub value_dims: Vec<ValueDimension>,
    pub target_surface: String,
    /// The vague instruction the user gives instead of the goal list.
    pub description: String,
    pub property_table: BTreeMap<String, BTreeSet<String>>,
    #[serde(default = "default_distractors")]
    pub distractors: Vec<String>,
    #[serde(default = "default_containers")]
    pub containers: Vec<Fixture>,
    #[serde(default = "default_surfaces")]
    pub surfaces: Vec<Fixture>,
}

fn default_distractors() -> Vec<String> {
    vec!["toothbrush".into(), "candle".into()]
}

fn default_containers() -> Vec<Fixture> {
    vec![
        Fixture::new("fridge", Room::Kitchen),
        Fixture::new("kitchencabinet", Room::Kitchen),
        Fixture::new("cabinet", Room::LivingRoom),
        Fixture::new("closet", Room::Bedroom),
        Fixture::new("bathroomcabinet", Room::Bathroom),
    ]
}

fn default_surfaces() -> Vec<Fixture> {
    vec![
        Fixture::new("kitchencounter", Room::Kitchen),
        Fixture::new("dinnertable", Room::Kitchen),
        Fixture::new("coffeetable", Room::LivingRoom),
        Fixture::new("desk", Room::Bedroom),
    ]
}

impl TaskSpec {
    pub fn goal_index(&self, class_name: &str) -> Option<usize> {
        self.potential_goals.iter().position(|g| g == class_name)
    }

    pub fn is_potential_goal(&self, class_name: &str) -> bool {
        self.goal_index(class_name).is_some()
    }

    pub fn properties_of(&self, class_name: &str) -> impl Iterator<Item = &str> {
        self.property_table
            .get(class_name)
            .into_iter()
            .flat_map(|tags| tags.iter().map(String::as_str))
    }

    /// Every property tag that appears anywhere in the table.
    pub fn property_vocabulary(&self) -> BTreeSet<String> {
        self.property_table.values().flatten().cloned().collect()
    }

    pub fn target_room(&self) -> Room {
        self.surfaces
            .iter()
            .find(|f| f.class_name == self.target_surface)
            .map(|f| f.room)
            .unwrap_or(Room::LivingRoom)
    }

    /// Dimensions whose affinity list contains `class_name`.
    pub fn dimensions_of<'a>(&'a self, class_name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.value_dims
            .iter()
            .filter(move |d| d.affects.iter().any(|a| a == class_name))
            .map(|d| d.name.as_str())
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let fail = |reason: String| {
            Err(TaskError::Invalid {
                task: self.id.clone(),
                reason,
            })
        };
        if self.potential_goals.is_empty() {
            return fail("empty goal vocabulary".into());
        }
        if self.goal_count == 0 || self.goal_count > self.potential_goals.len() {
            return fail(format!(
                "goal count {} outside 1..={}",
                self.goal_count,
                self.potential_goals.len()
            ));
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        let mut names = BTreeSet::new();
        let all_names = self
            .potential_goals
            .iter()
            .chain(&self.distractors)
            .chain(self.containers.iter().map(|f| &f.class_name))
            .chain(self.surfaces.iter().map(|f| &f.class_name));
        for name in all_names {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric()) {
                return fail(format!("class name `{name}` must be non-empty ascii alphanumeric"));
            }
            if !names.insert(name.as_str()) {
                return fail(format!("class name `{name}` appears twice"));
            }
        }
        for dim in &self.value_dims {
            if dim.affects.is_empty() {
                return fail(format!("value dimension `{}` affects nothing", dim.name));
            }
            if let Some(bad) = dim.affects.iter().find(|a| !self.is_potential_goal(a)) {
                return fail(format!("dimension `{}` names unknown goal `{bad}`", dim.name));
            }
        }
        for goal in &self.potential_goals {
            if self.properties_of(goal).next().is_none() {
                return fail(format!("goal `{goal}` has no property tags"));
            }
        }
        if let Some(tag) = self.property_vocabulary().into_iter().find(|t| names.contains(t.as_str())) {
            return fail(format!("property tag `{tag}` collides with an object name"));
        }
        if self.distractors.len() < 2 {
            return fail("at least two distractor objects are required".into());
        }
        if self.containers.len() < 2 {
            return fail("at least two containers are required".into());
        }
        if !self.surfaces.iter().any(|s| s.class_name == self.target_surface) {
            return fail(format!("target surface `{}` is not in the scene", self.target_surface));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TaskError> {
        let spec: TaskSpec = toml::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("task specs always serialize")
    }

    /// Loads a spec from a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let spec: TaskSpec =
                serde_json::from_str(&text).map_err(|e| TaskError::Parse(e.to_string()))?;
            spec.validate()?;
            Ok(spec)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

fn tags(list: &[&str]) -> BTreeSet<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn dim(name: &str, affects: &[&str]) -> ValueDimension {
    ValueDimension {
        name: name.to_string(),
        affects: affects.iter().map(|s| s.to_string()).collect(),
    }
}

fn snack(id: &str, goal_count: usize, max_steps: u32) -> TaskSpec {
    let goals = [
        "cupcake",
        "wine",
        "milk",
        "cereal",
        "chips",
        "apple",
        "juice",
        "pudding",
        "creamybuns",
        "chocolatesyrup",
    ];
    let property_table = BTreeMap::from([
        ("cupcake".into(), tags(&["sweet", "baked"])),
        ("wine".into(), tags(&["alcoholic", "drinkable"])),
        ("milk".into(), tags(&["creamy", "drinkable"])),
        ("cereal".into(), tags(&["crunchy", "grainy"])),
        ("chips".into(), tags(&["crunchy", "salty"])),
        ("apple".into(), tags(&["fruity", "fresh"])),
        ("juice".into(), tags(&["refreshing", "fruity", "drinkable"])),
        ("pudding".into(), tags(&["sweet", "creamy"])),
        ("creamybuns".into(), tags(&["sweet", "soft"])),
        ("chocolatesyrup".into(), tags(&["sweet", "chocolatey"])),
        ("toothbrush".into(), tags(&["minty"])),
        ("candle".into(), tags(&["scented"])),
    ]);
    TaskSpec {
        id: id.to_string(),
        name: "Prepare Afternoon Snack".into(),
        potential_goals: goals.iter().map(|s| s.to_string()).collect(),
        goal_count,
        max_steps,
        value_dims: vec![
            dim("Hungry", &["chips", "cereal"]),
            dim("Thirsty", &["juice", "milk"]),
            dim("SweetTooth", &["cupcake", "pudding", "creamybuns", "chocolatesyrup"]),
            dim("Fruitarian", &["apple"]),
            dim("Alcoholic", &["wine"]),
        ],
        target_surface: "coffeetable".into(),
        description: "Prepare an afternoon snack for me.".into(),
        property_table,
        distractors: default_distractors(),
        containers: default_containers(),
        surfaces: default_surfaces(),
    }
}

fn table(id: &str, goal_count: usize, max_steps: u32) -> TaskSpec {
    let goals = [
        "coffeepot",
        "breadslice",
        "cutleryknife",
        "mug",
        "plate",
        "wineglass",
        "cutleryfork",
        "waterglass",
    ];
    let property_table = BTreeMap::from([
        ("coffeepot".into(), tags(&["caffeinated", "hot"])),
        ("breadslice".into(), tags(&["light", "baked"])),
        ("cutleryknife".into(), tags(&["sharp", "metallic"])),
        ("mug".into(), tags(&["hot", "handled"])),
        ("plate".into(), tags(&["flat", "ceramic"])),
        ("wineglass".into(), tags(&["alcoholic", "glassware"])),
        ("cutleryfork".into(), tags(&["pronged", "metallic"])),
        ("waterglass".into(), tags(&["refreshing", "glassware"])),
        ("toothbrush".into(), tags(&["minty"])),
        ("candle".into(), tags(&["scented"])),
    ]);
    TaskSpec {
        id: id.to_string(),
        name: "Set Up Dinner Table".into(),
        potential_goals: goals.iter().map(|s| s.to_string()).collect(),
        goal_count,
        max_steps,
        value_dims: vec![
            dim("NeedRefresh", &["breadslice"]),
            dim("Thirsty", &["waterglass", "mug"]),
            dim("MeatLove", &["cutleryknife", "cutleryfork", "plate"]),
            dim("CaffeinTolerable", &["coffeepot"]),
            dim("Alcoholic", &["wineglass"]),
        ],
        target_surface: "dinnertable".into(),
        description: "Set up the dinner table for me.".into(),
        property_table,
        distractors: default_distractors(),
        containers: default_containers(),
        surfaces: default_surfaces(),
    }
}

/// Snack-M, Snack-L, Table-M, Table-L.
pub fn builtin_tasks() -> Vec<TaskSpec> {
    vec![
        snack("snack-m", 2, 200),
        snack("snack-l", 4, 300),
        table("table-m", 2, 200),
        table("table-l", 4, 300),
    ]
}

pub fn builtin_task(id: &str) -> Result<TaskSpec, TaskError> {
    builtin_tasks()
        .into_iter()
        .find(|t| t.id.eq_ignore_ascii_case(id))
        .ok_or_else(|| TaskError::UnknownTask(id.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Not,
    Somewhat,
    Very,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Not, Level::Somewhat, Level::Very];

    /// Weight used when scoring how attractive an object is.
    pub fn weight(self) -> u32 {
        match self {
            Level::Not => 0,
            Level::Somewhat => 1,
            Level::Very => 2,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Not => "Not",
            Level::Somewhat => "Somewhat",
            Level::Very => "Very",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueProfile {
    pub levels: BTreeMap<String, Level>,
}

impl ValueProfile {
    pub fn level(&self, dimension: &str) -> Level {
        self.levels.get(dimension).copied().unwrap_or(Level::Not)
    }

    /// `Very Alcoholic, Not Hungry, ...` in the spec's dimension order.
    pub fn describe(&self, spec: &TaskSpec) -> String {
        spec.value_dims
            .iter()
            .map(|d| format!("{} {}", self.level(&d.name), d.name))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn sample_values(spec: &TaskSpec, seed: u64) -> ValueProfile {
    let mut rng = seed::rng(seed, salt::VALUES);
    let levels = spec
        .value_dims
        .iter()
        .map(|d| (d.name.clone(), Level::ALL[rng.random_range(0..3)]))
        .collect();
    ValueProfile { levels }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of distinct goal sets the user could hold.
pub fn goal_hypothesis_count(spec: &TaskSpec) -> u64 {
    binomial(spec.potential_goals.len() as u64, spec.goal_count as u64)
}

/// Exact episode score, a multiple of `1/(2N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Score(pub Ratio<i64>);

impl Score {
    pub const ZERO: Score = Score(Ratio::new_raw(0, 1));
    pub const ONE: Score = Score(Ratio::new_raw(1, 1));

    pub fn new(numer: i64, denom: i64) -> Self {
        Score(Ratio::new(numer, denom))
    }

    pub fn as_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl std::ops::Add for Score {
    type Output = Score;
    fn add(self, rhs: Score) -> Score {
        Score(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Score {
    fn add_assign(&mut self, rhs: Score) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Score {
    fn sum<I: Iterator<Item = Score>>(iter: I) -> Score {
        iter.fold(Score::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Score {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ratio::from_str(s).map(Score).map_err(|e| format!("bad score `{s}`: {e}"))
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The user's latent goals plus the record of what has been put on the
/// target surface so far.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoalSet {
    pub goals: BTreeSet<String>,
    pub placed_correct: BTreeSet<String>,
    /// One entry per wrong placement event.
    pub placed_wrong: Vec<String>,
}

impl GoalSet {
    pub fn new<I, S>(goals: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        GoalSet {
            goals: goals.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.goals.is_empty() && self.placed_correct == self.goals
    }

    pub fn remaining(&self) -> impl Iterator<Item = &String> {
        self.goals.difference(&self.placed_correct)
    }
}

/// Score bookkeeping for a Placed event; other events are a contract
/// violation.
pub fn on_placement(
    goal: &mut GoalSet,
    spec: &TaskSpec,
    event: &TransitionEvent,
) -> Result<Score, TaskError> {
    let TransitionEvent::Placed {
        class_name,
        surface_class,
        ..
    } = event
    else {
        return Err(TaskError::NotAPlacement(format!("{event:?}")));
    };
    let n = spec.goal_count as i64;
    if *surface_class != spec.target_surface {
        return Ok(Score::ZERO);
    }
    if goal.goals.contains(class_name) {
        if goal.placed_correct.insert(class_name.clone()) {
            Ok(Score::new(1, n))
        } else {
            Ok(Score::ZERO)
        }
    } else {
        goal.placed_wrong.push(class_name.clone());
        Ok(Score::new(-1, 2 * n))
    }
}

pub fn episode_score(goal: &GoalSet, spec: &TaskSpec) -> Score {
    let n = spec.goal_count as i64;
    Score::new(goal.placed_correct.len() as i64, n)
        + Score::new(-(goal.placed_wrong.len() as i64), 2 * n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub score: Score,
    pub steps: u32,
    pub comm_tokens: usize,
}
