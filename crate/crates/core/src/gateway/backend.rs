use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::messages::ChatMessage;
use crate::plan::ToolKind;
use crate::sampling::AnchoredFrame;
use crate::timeline::TimeInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("backend failure: {0}")]
    Failed(String),
}

/// Assistant message JSON plus token usage when the backend reports it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub message: Value,
    pub usage: Option<Usage>,
}

/// A chat-completion model: the reasoner, or the memory updater.
pub trait ChatBackend: Send + Sync {
    /// `tools` carries the tool definitions when a tool call is expected.
    fn complete(&self, messages: &[ChatMessage], tools: Option<&Value>) -> Result<ChatReply, BackendError>;
}

/// Everything an observer may look at for one context group.
#[derive(Debug, Clone, Copy)]
pub struct ObservationRequest<'a> {
    pub tool: ToolKind,
    pub query: &'a str,
    pub interval: TimeInterval,
    pub frames: &'a [AnchoredFrame],
    pub messages: &'a [ChatMessage],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverReply {
    pub text: String,
    pub usage: Option<Usage>,
}

/// A vision model, or a deterministic stand-in, answering over one group.
pub trait Observer: Send + Sync {
    fn observe(&self, request: &ObservationRequest<'_>) -> Result<ObserverReply, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, messages: &[ChatMessage], tools: Option<&Value>) -> Result<ChatReply, BackendError> {
        (**self).complete(messages, tools)
    }
}

impl<T: Observer + ?Sized> Observer for &T {
    fn observe(&self, request: &ObservationRequest<'_>) -> Result<ObserverReply, BackendError> {
        (**self).observe(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, messages: &[ChatMessage], tools: Option<&Value>) -> Result<ChatReply, BackendError> {
        (**self).complete(messages, tools)
    }
}

impl<T: Observer + ?Sized> Observer for std::sync::Arc<T> {
    fn observe(&self, request: &ObservationRequest<'_>) -> Result<ObserverReply, BackendError> {
        (**self).observe(request)
    }
}
