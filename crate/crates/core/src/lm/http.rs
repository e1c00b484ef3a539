use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{check_messages, BackendConfig, ChatBackend, ChatExchange, LmError};

static REQUEST_LOCK: Mutex<()> = Mutex::new(());

/// OpenAI-compatible chat-completion client over blocking HTTP.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(LmError),
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LmError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(HttpBackend {
            config,
            agent,
            url,
            api_key,
        })
    }

    fn body(&self, messages: &[ChatExchange]) -> Value {
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| json!({"role": m.role.wire_name(), "content": m.content}))
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        debug!(status, response = %text, "chat completion response");
        if status == 429 || status >= 500 {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(LmError::BackendUnavailable {
                attempts: 1,
                last: format!("HTTP {status}: {text}"),
            });
        }
        match parse_completion(&text) {
            Ok(content) => Attempt::Done(content),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

/// Extracts `choices[0].message.content`.
pub(crate) fn parse_completion(text: &str) -> Result<String, LmError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| LmError::BackendProtocolError(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LmError::BackendProtocolError("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn chat(&self, messages: &[ChatExchange]) -> Result<String, LmError> {
        check_messages(messages)?;
        let body = self.body(messages);
        // The key travels only in the header; the body is safe to log.
        debug!(url = %self.url, request = %body, "chat completion request");
        let _guard = self
            .config
            .serialize_requests
            .then(|| REQUEST_LOCK.lock().unwrap_or_else(|p| p.into_inner()));
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(reason) => {
                    warn!(attempt = attempt + 1, %reason, "transient chat backend failure");
                    last = reason;
                }
            }
        }
        Err(LmError::BackendUnavailable { attempts, last })
    }
}
