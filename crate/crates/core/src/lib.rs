//! Household assistance benchmark: a symbolic home, a value-driven proxy
//! user, the FAMER assistant, baseline agents and the session harness.

pub mod agent;
pub mod baselines;
pub mod dialogue;
pub mod famer;
pub mod harness;
pub mod lm;
pub mod prompt;
pub mod seed;
pub mod tasks;
pub mod user;
pub mod world;

pub use agent::{Agent, AgentError, StepOutcome};
pub use famer::{AgentMemory, FamerAgent, FamerConfig, KeyFact, MentalModel};
pub use harness::{
    AgentKind, EpisodeResult, HarnessError, Seeds, SessionConfig, SessionResult, TranscriptEntry, UserKind,
};
pub use lm::{BackendConfig, BackendKind, ChatBackend, ChatExchange, ChatRole, LmError};
pub use tasks::{builtin_task, builtin_tasks, GoalSet, Level, Score, TaskSpec, ValueProfile};
pub use user::{UserReply, UserState};
pub use world::{Action, Observation, Room, SceneState, TransitionEvent};
