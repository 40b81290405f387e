//! OpenAI-compatible chat-completions clients for the reasoner, the memory
//! updater, and the vision observer.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{BackendError, ChatBackend, ChatReply, ObservationRequest, Observer, ObserverReply, Usage};
use super::messages::ChatMessage;

pub const ENV_API_BASE: &str = "FRAMESCOUT_API_BASE";
pub const ENV_API_KEY: &str = "FRAMESCOUT_API_KEY";
pub const ENV_REASONER_MODEL: &str = "FRAMESCOUT_REASONER_MODEL";
pub const ENV_OBSERVER_MODEL: &str = "FRAMESCOUT_OBSERVER_MODEL";
pub const ENV_TIMEOUT_SECS: &str = "FRAMESCOUT_TIMEOUT_SECS";

const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
const DEFAULT_TIMEOUT_SECS: u64 = 120;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

fn env_first(names: &[&str]) -> Option<String> {
    names
        .iter()
        .find_map(|n| std::env::var(n).ok().filter(|v| !v.trim().is_empty()))
}

impl HttpConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            max_in_flight: 4,
        }
    }

    /// Base URL, key and timeout from `FRAMESCOUT_*` variables, falling
    /// back to `OPENAI_BASE_URL` / `OPENAI_API_KEY`. `model_var` names the
    /// model variable to read; `None` when it is unset.
    pub fn from_env(model_var: &str) -> Option<Self> {
        let model = env_first(&[model_var])?;
        let mut cfg = Self::new(
            env_first(&[ENV_API_BASE, "OPENAI_BASE_URL"]).unwrap_or_else(|| DEFAULT_API_BASE.to_string()),
            model,
        );
        cfg.api_key = env_first(&[ENV_API_KEY, "OPENAI_API_KEY"]);
        if let Some(secs) = env_first(&[ENV_TIMEOUT_SECS]).and_then(|s| s.parse::<u64>().ok()) {
            cfg.timeout = Duration::from_secs(secs);
        }
        Some(cfg)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.api_base.trim_end_matches('/'))
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpChatClient {
    config: HttpConfig,
    agent: ureq::Agent,
    slots: Slots,
}

impl std::fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("api_base", &self.config.api_base)
            .field("model", &self.config.model)
            .finish()
    }
}

impl HttpChatClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build();
        Self {
            slots: Slots::new(config.max_in_flight),
            agent: ureq::Agent::new_with_config(agent),
            config,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn request_body(&self, messages: &[ChatMessage], tools: Option<&Value>) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": messages.iter().map(ChatMessage::to_openai).collect::<Vec<_>>(),
        });
        if let Some(tools) = tools {
            body["tools"] = tools.clone();
            body["tool_choice"] = json!("auto");
        }
        body
    }
}

fn parse_usage(v: &Value) -> Option<Usage> {
    let u = v.get("usage")?;
    Some(Usage {
        prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    })
}

/// Pulls `choices[0].message` and usage out of a completion response.
pub fn parse_completion(body: &str) -> Result<ChatReply, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    let message = v
        .pointer("/choices/0/message")
        .cloned()
        .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message".into()))?;
    Ok(ChatReply {
        message,
        usage: parse_usage(&v),
    })
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage], tools: Option<&Value>) -> Result<ChatReply, BackendError> {
        let body = self.request_body(messages, tools);
        let _slot = self.slots.acquire();
        let mut req = self
            .agent
            .post(&self.config.endpoint())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { status, body: text });
        }
        parse_completion(&text)
    }
}

/// Vision observer: sends the prepared observer messages and returns the
/// reply text.
#[derive(Debug)]
pub struct HttpVlmObserver {
    pub client: HttpChatClient,
}

impl HttpVlmObserver {
    pub fn new(config: HttpConfig) -> Self {
        Self {
            client: HttpChatClient::new(config),
        }
    }
}

impl Observer for HttpVlmObserver {
    fn observe(&self, request: &ObservationRequest<'_>) -> Result<ObserverReply, BackendError> {
        let reply = self.client.complete(request.messages, None)?;
        let text = match reply.message.get("content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(parts)) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("\n"),
            _ => {
                return Err(BackendError::InvalidResponse(
                    "observer reply has no text content".into(),
                ))
            }
        };
        Ok(ObserverReply {
            text,
            usage: reply.usage,
        })
    }
}
