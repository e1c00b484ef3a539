//! Chat-model backends and token accounting.
//!
//! Two transports implement [`ChatBackend`]: an OpenAI-compatible HTTP
//! client and a deterministic mock. Nothing else in the crate talks to the
//! network.

mod http;
mod mock;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockEntry, MockScript};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("chat request needs at least one message")]
    EmptyMessages,
    #[error("last message must come from the agent or system, not {0:?}")]
    BadLastRole(ChatRole),
    #[error("backend unavailable after {attempts} attempt(s): {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("malformed backend response: {0}")]
    BackendProtocolError(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    Agent,
    User,
    System,
}

impl ChatRole {
    /// Role name on the wire. The caller's own turns are `user`, the other
    /// party's are `assistant`.
    pub fn wire_name(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::Agent => "user",
            ChatRole::User => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role: ChatRole,
    pub content: String,
    pub token_count: usize,
}

impl ChatExchange {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        let content = content.into();
        let token_count = count_tokens(&content);
        ChatExchange {
            role,
            content,
            token_count,
        }
    }

    pub fn agent(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Agent, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(ChatRole::System, content)
    }
}

/// Pluggable token counter for the communication-cost metric.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Counts whitespace-separated words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordCounter;

impl TokenCounter for WordCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn count_tokens(text: &str) -> usize {
    WordCounter.count(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_ms: u64,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    /// Mock only.
    pub seed: u64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Mock only: canned responses.
    pub mock_script: Option<PathBuf>,
    /// Funnel all HTTP requests of the process through one lock.
    pub serialize_requests: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            temperature: 0.7,
            max_retries: 3,
            timeout_ms: 60_000,
            backoff_ms: 500,
            seed: 0,
            api_key_env: "OPENAI_API_KEY".into(),
            mock_script: None,
            serialize_requests: false,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.timeout_ms == 0 {
            return Err(LmError::Config("timeout must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LmError::Config("temperature must be a non-negative number".into()));
        }
        Ok(())
    }
}

pub trait ChatBackend: Send + Sync {
    /// Returns the assistant text for the conversation so far.
    fn chat(&self, messages: &[ChatExchange]) -> Result<String, LmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn chat(&self, messages: &[ChatExchange]) -> Result<String, LmError> {
        (**self).chat(messages)
    }
}

pub(crate) fn check_messages(messages: &[ChatExchange]) -> Result<(), LmError> {
    match messages.last() {
        None => Err(LmError::EmptyMessages),
        Some(m) if m.role == ChatRole::User => Err(LmError::BadLastRole(m.role)),
        Some(_) => Ok(()),
    }
}

/// Builds the backend a config describes.
pub fn connect(config: &BackendConfig) -> Result<Arc<dyn ChatBackend>, LmError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Http => Arc::new(HttpBackend::new(config.clone())?),
        BackendKind::Mock => {
            let script = match &config.mock_script {
                Some(path) => MockScript::load(path)?,
                None => MockScript::default(),
            };
            Arc::new(MockBackend::new(config.seed, script))
        }
    })
}

/// One-shot convenience over [`connect`].
pub fn chat(config: &BackendConfig, messages: &[ChatExchange]) -> Result<String, LmError> {
    connect(config)?.chat(messages)
}
