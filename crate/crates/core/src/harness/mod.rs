//! Episode and session orchestration.

mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::agent::{describe_action, Agent, StepOutcome};
use crate::baselines::{CoelaAgent, MhpAgent, MhpConfig, ProAgent};
use crate::famer::{AgentMemory, FamerAgent, FamerConfig};
use crate::lm::{self, BackendConfig, ChatBackend, ChatRole, LmError};
use crate::seed::{self, salt};
use crate::tasks::{builtin_task, episode_score, on_placement, sample_values, Score, TaskError, TaskSpec, ValueProfile};
use crate::user::{generate_goal_set, respond, UserBackend, UserState};
use crate::world::{build_scene, legal_actions, observe, Action, TransitionEvent};

pub use report::{
    aggregate, format_transcript, load_sessions, read_transcript, replay_metrics, write_csv, write_transcript,
    Metrics, SummaryRow, TranscriptHeader,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Backend(#[from] LmError),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed record in {path}: {source}")]
    Format {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Famer,
    FamerWoDesire,
    FamerWoEc,
    FamerWoKeyinfo,
    Mhp,
    Coela,
    Proagent,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::Famer,
        AgentKind::FamerWoDesire,
        AgentKind::FamerWoEc,
        AgentKind::FamerWoKeyinfo,
        AgentKind::Mhp,
        AgentKind::Coela,
        AgentKind::Proagent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Famer => "famer",
            AgentKind::FamerWoDesire => "famer_wo_desire",
            AgentKind::FamerWoEc => "famer_wo_ec",
            AgentKind::FamerWoKeyinfo => "famer_wo_keyinfo",
            AgentKind::Mhp => "mhp",
            AgentKind::Coela => "coela",
            AgentKind::Proagent => "proagent",
        }
    }

    /// Agents that can never send a message.
    pub fn is_silent(self) -> bool {
        matches!(self, AgentKind::Mhp | AgentKind::Proagent)
    }

    fn famer_config(self) -> Option<FamerConfig> {
        let base = FamerConfig::default();
        Some(match self {
            AgentKind::Famer => base,
            AgentKind::FamerWoDesire => FamerConfig {
                desire_inference: false,
                ..base
            },
            AgentKind::FamerWoEc => FamerConfig {
                efficient_comm: false,
                ..base
            },
            AgentKind::FamerWoKeyinfo => FamerConfig { key_info: false, ..base },
            _ => return None,
        })
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown agent `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub scene: u64,
    pub values: u64,
    pub agent: u64,
}

impl Seeds {
    /// Independent seeds derived from one base seed. Kept to 63 bits so
    /// they fit TOML integers.
    pub fn from_base(base: u64) -> Self {
        let derive = |k| seed::mix(base, salt::SESSION ^ k) >> 1;
        Seeds {
            scene: derive(1),
            values: derive(2),
            agent: derive(3),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKind {
    /// Rule-based replies; hermetic.
    #[default]
    Scripted,
    /// Replies generated through the configured chat backend.
    Chat,
}

fn default_episodes() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Builtin task id or a path to a task file.
    pub task: String,
    pub agent: AgentKind,
    #[serde(default = "default_episodes")]
    pub episodes: u32,
    pub seeds: Seeds,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub user: UserKind,
    #[serde(default)]
    pub mhp: MhpConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(task: &str, agent: AgentKind, base_seed: u64) -> Self {
        SessionConfig {
            task: task.to_string(),
            agent,
            episodes: default_episodes(),
            seeds: Seeds::from_base(base_seed),
            backend: BackendConfig {
                seed: base_seed,
                ..BackendConfig::default()
            },
            user: UserKind::Scripted,
            mhp: MhpConfig::default(),
            output_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: SessionConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::Config("episodes must be at least 1".into()));
        }
        self.backend.validate()?;
        self.resolve_task()?;
        Ok(())
    }

    pub fn resolve_task(&self) -> Result<TaskSpec, HarnessError> {
        let path = Path::new(&self.task);
        let spec = if path.extension().is_some_and(|e| e == "toml" || e == "json") {
            TaskSpec::load(path)?
        } else {
            builtin_task(&self.task)?
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One line of a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TranscriptEntry {
    Step {
        step: u32,
        action: Action,
        text: String,
        event: TransitionEvent,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score_delta: Option<Score>,
    },
    Message {
        step: u32,
        role: ChatRole,
        text: String,
        tokens: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// 1-based.
    pub episode: u32,
    pub score: Score,
    pub steps: u32,
    pub comm_tokens: usize,
    pub success: bool,
    /// Ground truth, for evaluation only.
    pub goal: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    pub transcript: Vec<TranscriptEntry>,
}

impl EpisodeResult {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            score: self.score,
            steps: self.steps,
            comm_tokens: self.comm_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDelta {
    pub score: Score,
    pub steps: i64,
    pub comm_tokens: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub task: String,
    pub agent: AgentKind,
    pub seeds: Seeds,
    pub values: ValueProfile,
    pub episodes: Vec<EpisodeResult>,
    /// Change from the previous episode, starting with episode 2.
    pub deltas: Vec<EpisodeDelta>,
}

impl SessionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results always serialize")
    }
}

/// Builds the agent a config asks for.
pub fn build_agent(
    config: &SessionConfig,
    spec: &TaskSpec,
    chat: Option<Arc<dyn ChatBackend>>,
) -> Result<Box<dyn Agent>, HarnessError> {
    if let Some(fc) = config.agent.famer_config() {
        return Ok(Box::new(FamerAgent::new(spec.clone(), fc, config.seeds.agent)));
    }
    let chat = || -> Result<Arc<dyn ChatBackend>, HarnessError> {
        match &chat {
            Some(c) => Ok(c.clone()),
            None => Ok(lm::connect(&config.backend)?),
        }
    };
    Ok(match config.agent {
        AgentKind::Mhp => Box::new(MhpAgent::new(spec.clone(), config.mhp, config.seeds.agent)),
        AgentKind::Coela => Box::new(CoelaAgent::new(spec.clone(), chat()?)),
        AgentKind::Proagent => Box::new(ProAgent::new(spec.clone(), chat()?)),
        _ => unreachable!("famer variants handled above"),
    })
}

/// Plays one episode: observe, act, step the world, score placements and
/// route messages through the user, until success or the step cap.
pub fn run_episode(
    spec: &TaskSpec,
    agent: &mut dyn Agent,
    user: &mut UserState,
    user_backend: &UserBackend,
    seeds: &Seeds,
) -> Result<EpisodeResult, HarnessError> {
    let episode = user.episode_index;
    let mut scene = build_scene(spec, seeds.scene)?;
    agent.begin_episode(episode);
    let reply_seed = seed::mix(seeds.values, u64::from(episode));
    let mut transcript = Vec::new();
    let mut pending_reply: Option<String> = None;
    let mut comm_tokens = 0usize;
    let mut aborted = None;

    while scene.step_count < spec.max_steps && !user.goal.is_complete() {
        let mut obs = observe(&scene);
        obs.incoming_message = pending_reply.take();
        let legal = legal_actions(&scene);
        let mut action = match agent.act(&obs, &legal) {
            Ok(a) => a,
            Err(err) => {
                aborted = Some(err.to_string());
                break;
            }
        };
        let allowed = match &action {
            Action::Send(_) => legal.contains(&Action::send_placeholder()),
            other => legal.contains(other),
        };
        if !allowed {
            warn!(?action, "agent chose an unavailable action; substituting wait");
            action = Action::Wait;
        }
        let text = describe_action(&action, &obs);
        let event = scene.step(&action);
        let score_delta = match &event {
            TransitionEvent::Placed { .. } => Some(on_placement(&mut user.goal, spec, &event)?),
            _ => None,
        };
        if score_delta.is_some() {
            user.refresh_progress();
        }
        user.agent_action_log.push(text.clone());
        let step = scene.step_count;
        transcript.push(TranscriptEntry::Step {
            step,
            action: action.clone(),
            text,
            event: event.clone(),
            score_delta,
        });
        agent.feedback(&StepOutcome {
            action: &action,
            event: &event,
            score_delta,
        });
        if let TransitionEvent::MessageSent { text } = &event {
            let sent = lm::count_tokens(text);
            comm_tokens += sent;
            transcript.push(TranscriptEntry::Message {
                step,
                role: ChatRole::Agent,
                text: text.clone(),
                tokens: sent,
            });
            match respond(user, spec, text, user_backend, reply_seed) {
                Ok(reply) => {
                    let tokens = lm::count_tokens(&reply.text);
                    comm_tokens += tokens;
                    transcript.push(TranscriptEntry::Message {
                        step,
                        role: ChatRole::User,
                        text: reply.text.clone(),
                        tokens,
                    });
                    pending_reply = Some(reply.text);
                }
                Err(err) => {
                    aborted = Some(err.to_string());
                    break;
                }
            }
        }
    }
    agent.end_episode();
    Ok(EpisodeResult {
        episode,
        score: episode_score(&user.goal, spec),
        steps: scene.step_count,
        comm_tokens,
        success: user.goal.is_complete(),
        goal: user.goal.goals.clone(),
        aborted,
        transcript,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Runs every episode of a session with one user and one agent. Results,
/// transcripts and agent memory go to `output_dir` when set.
pub fn run_session(config: &SessionConfig) -> Result<SessionResult, HarnessError> {
    config.validate()?;
    let spec = config.resolve_task()?;
    let needs_chat = config.user == UserKind::Chat || matches!(config.agent, AgentKind::Coela | AgentKind::Proagent);
    let chat = if needs_chat { Some(lm::connect(&config.backend)?) } else { None };
    let user_backend = match (&config.user, &chat) {
        (UserKind::Chat, Some(c)) => UserBackend::Chat(c.clone()),
        _ => UserBackend::Scripted,
    };
    let mut agent = build_agent(config, &spec, chat.clone())?;
    let values = sample_values(&spec, config.seeds.values);
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        write_file(&dir.join("config.toml"), &config.to_toml_string())?;
    }

    let mut episodes: Vec<EpisodeResult> = Vec::new();
    for e in 1..=config.episodes {
        let goal_seed = seed::mix(config.seeds.values, u64::from(e));
        let result = match generate_goal_set(&spec, &values, &user_backend, goal_seed) {
            Ok(goal) => {
                let mut user = UserState::new(values.clone(), goal, e);
                run_episode(&spec, agent.as_mut(), &mut user, &user_backend, &config.seeds)?
            }
            Err(err) => {
                warn!(%err, episode = e, "goal sampling failed; episode skipped");
                EpisodeResult {
                    episode: e,
                    score: Score::ZERO,
                    steps: 0,
                    comm_tokens: 0,
                    success: false,
                    goal: BTreeSet::new(),
                    aborted: Some(err.to_string()),
                    transcript: Vec::new(),
                }
            }
        };
        info!(
            agent = %config.agent,
            episode = e,
            score = %result.score,
            steps = result.steps,
            tokens = result.comm_tokens,
            "episode finished"
        );
        if let Some(dir) = &config.output_dir {
            let header = TranscriptHeader {
                task: spec.id.clone(),
                agent: config.agent,
                episode: e,
                goal: result.goal.clone(),
            };
            write_transcript(&dir.join(format!("episode_{e}.jsonl")), &header, &result.transcript)?;
            if let Some(doc) = agent.memory_document() {
                write_file(&dir.join(format!("memory_episode_{e}.json")), &doc)?;
            }
        }
        episodes.push(result);
    }

    let deltas = episodes
        .windows(2)
        .map(|w| EpisodeDelta {
            score: Score(w[1].score.0 - w[0].score.0),
            steps: i64::from(w[1].steps) - i64::from(w[0].steps),
            comm_tokens: w[1].comm_tokens as i64 - w[0].comm_tokens as i64,
        })
        .collect();
    let result = SessionResult {
        task: spec.id.clone(),
        agent: config.agent,
        seeds: config.seeds,
        values,
        episodes,
        deltas,
    };
    if let Some(dir) = &config.output_dir {
        write_file(&dir.join("session.json"), &result.to_json())?;
    }
    Ok(result)
}

/// Runs independent sessions on the rayon pool; order follows `configs`.
pub fn run_sessions(configs: &[SessionConfig]) -> Vec<Result<SessionResult, HarnessError>> {
    configs.par_iter().map(run_session).collect()
}

/// Restores a FAMER agent from a persisted memory document.
pub fn resume_famer(
    spec: &TaskSpec,
    kind: AgentKind,
    seed: u64,
    document: &str,
) -> Result<FamerAgent, HarnessError> {
    let config = kind
        .famer_config()
        .ok_or_else(|| HarnessError::Config(format!("{kind} keeps no memory document")))?;
    let memory = AgentMemory::load(document).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(FamerAgent::with_memory(spec.clone(), config, seed, memory))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agent_kind_names_round_trip() {
        for k in AgentKind::ALL {
            assert_eq!(k.name().parse::<AgentKind>().unwrap(), k);
        }
        assert_eq!("famer-wo-ec".parse::<AgentKind>().unwrap(), AgentKind::FamerWoEc);
        assert!("gpt".parse::<AgentKind>().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let c = SessionConfig::new("snack-m", AgentKind::Famer, 7);
        let back = SessionConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn zero_episodes_rejected() {
        let mut c = SessionConfig::new("snack-m", AgentKind::Famer, 7);
        c.episodes = 0;
        assert!(c.validate().is_err());
        c.episodes = 1;
        c.task = "nope".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn famer_session_completes() {
        let c = SessionConfig::new("snack-m", AgentKind::Famer, 3);
        let r = run_session(&c).unwrap();
        assert_eq!(r.episodes.len(), 3);
        assert_eq!(r.deltas.len(), 2);
        for e in &r.episodes {
            assert!(e.steps <= 200);
            assert!(e.aborted.is_none());
        }
        assert_eq!(r.episodes[2].score, Score::ONE);
    }
}
