//! Chat-completion model abstraction.
//!
//! [`ChatModel`] is implemented by the HTTP gateway in the std crate and by
//! [`ScriptedModel`] here. The [`wire`] module holds the OpenAI-compatible
//! request and response shapes so they can be tested without a socket.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::message::{Message, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct ChatParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_retries: u8,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            model_name: String::from("default"),
            temperature: 0.7,
            max_tokens: 2048,
            timeout: Duration::from_secs(120),
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamsError {
    #[error("temperature {0} outside [0, 2]")]
    Temperature(String),
    #[error("max_tokens must be at least 1")]
    MaxTokens,
    #[error("max_retries {0} exceeds 5")]
    MaxRetries(u8),
}

impl ChatParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ParamsError::Temperature(self.temperature.to_string()));
        }
        if self.max_tokens == 0 {
            return Err(ParamsError::MaxTokens);
        }
        if self.max_retries > 5 {
            return Err(ParamsError::MaxRetries(self.max_retries));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelReply {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

impl ModelReply {
    pub fn stop(content: impl Into<String>) -> Self {
        ModelReply {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid request: {0}")]
    Precondition(&'static str),
    #[error("TransportError: {0}")]
    Transport(String),
    #[error("ProtocolError: {0}")]
    Protocol(String),
    #[error("ModelRefusal: {0}")]
    Refusal(String),
    #[error("ScriptExhausted: no scripted replies left")]
    ScriptExhausted,
    #[error("NoMatch: no remaining scripted reply matches the last message")]
    NoMatch,
}

impl ModelError {
    /// Network-level failure, the only kind that is worth retrying.
    pub fn is_transport(&self) -> bool {
        matches!(self, ModelError::Transport(_))
    }
}

/// Checks the shape every completion request must have.
pub fn check_request(messages: &[Message]) -> Result<(), ModelError> {
    match messages.first() {
        None => Err(ModelError::Precondition("message list is empty")),
        Some(m) if m.role != Role::System => {
            Err(ModelError::Precondition("first message must have role system"))
        }
        Some(_) => Ok(()),
    }
}

/// A chat-completion backend. One call in flight at a time.
pub trait ChatModel {
    fn complete(&mut self, messages: &[Message], params: &ChatParams) -> Result<ModelReply, ModelError>;
}

impl<M: ChatModel + ?Sized> ChatModel for alloc::boxed::Box<M> {
    fn complete(&mut self, messages: &[Message], params: &ChatParams) -> Result<ModelReply, ModelError> {
        (**self).complete(messages, params)
    }
}

impl<M: ChatModel + ?Sized> ChatModel for &mut M {
    fn complete(&mut self, messages: &[Message], params: &ChatParams) -> Result<ModelReply, ModelError> {
        (**self).complete(messages, params)
    }
}

pub mod wire {
    //! OpenAI-compatible `POST /v1/chat/completions` bodies.

    use super::*;
    use serde_json::Value;

    pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct WireMessage {
        pub role: String,
        pub content: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ChatRequest {
        pub model: String,
        pub messages: Vec<WireMessage>,
        pub temperature: f64,
        pub max_tokens: u32,
    }

    /// Wire role for a transcript role. Observations travel as user turns
    /// because the protocol's tool role requires function-call ids.
    pub fn wire_role(role: Role) -> &'static str {
        match role {
            Role::System => "system",
            Role::User | Role::Tool => "user",
            Role::Assistant => "assistant",
        }
    }

    impl ChatRequest {
        pub fn new(messages: &[Message], params: &ChatParams) -> Self {
            ChatRequest {
                model: params.model_name.clone(),
                messages: messages
                    .iter()
                    .map(|m| WireMessage {
                        role: wire_role(m.role).to_string(),
                        content: m.content.clone(),
                    })
                    .collect(),
                temperature: params.temperature,
                max_tokens: params.max_tokens,
            }
        }

        pub fn to_json(&self) -> String {
            serde_json::to_string(self).expect("request serializes")
        }
    }

    /// Reads `choices[0].message.content` and the finish reason.
    ///
    /// A `content_filter` finish maps to [`FinishReason::Error`]; callers
    /// turn that into a refusal.
    pub fn parse_response(body: &[u8]) -> Result<ModelReply, ModelError> {
        let value: Value = serde_json::from_slice(body)
            .map_err(|e| ModelError::Protocol(alloc::format!("response is not JSON: {e}")))?;
        let choice = value
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| ModelError::Protocol("response has no choices[0]".into()))?;
        let content = match choice.get("message").and_then(|m| m.get("content")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(_) => return Err(ModelError::Protocol("message.content is not a string".into())),
        };
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            None | Some("stop") | Some("tool_calls") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        };
        let usage = value.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(ModelReply {
            content,
            finish_reason,
            usage,
        })
    }
}

/// When a scripted entry may be played.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Always,
    LastMessageContains(String),
}

impl Matcher {
    pub fn accepts(&self, last: Option<&Message>) -> bool {
        match self {
            Matcher::Always => true,
            Matcher::LastMessageContains(needle) => last.is_some_and(|m| m.content.contains(needle.as_str())),
        }
    }
}

/// A scripted reply: text, or an injected failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scripted {
    Reply(String),
    TransportError(String),
    ProtocolError(String),
    Refusal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default = "always")]
    pub matcher: Matcher,
    #[serde(flatten)]
    pub reply: Scripted,
}

fn always() -> Matcher {
    Matcher::Always
}

impl ScriptEntry {
    pub fn always(reply: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: Matcher::Always,
            reply: Scripted::Reply(reply.into()),
        }
    }

    pub fn when_last_contains(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: Matcher::LastMessageContains(needle.into()),
            reply: Scripted::Reply(reply.into()),
        }
    }

    pub fn fail(error: Scripted) -> Self {
        ScriptEntry {
            matcher: Matcher::Always,
            reply: error,
        }
    }
}

/// Deterministic stand-in for a chat model that replays a fixed script.
///
/// Each call plays the first entry at or after the cursor whose matcher
/// accepts the last request message; the cursor moves past it, so skipped
/// entries are consumed too.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScriptedModel {
    script: Vec<ScriptEntry>,
    cursor: usize,
}

impl ScriptedModel {
    pub fn new(script: Vec<ScriptEntry>) -> Self {
        ScriptedModel { script, cursor: 0 }
    }

    /// Every reply matched with [`Matcher::Always`].
    pub fn replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(replies.into_iter().map(ScriptEntry::always).collect())
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(json)?))
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - self.cursor
    }

    pub fn scripted_complete(&mut self, messages: &[Message]) -> Result<ModelReply, ModelError> {
        if self.cursor >= self.script.len() {
            return Err(ModelError::ScriptExhausted);
        }
        let last = messages.last();
        let idx = (self.cursor..self.script.len())
            .find(|&i| self.script[i].matcher.accepts(last))
            .ok_or(ModelError::NoMatch)?;
        self.cursor = idx + 1;
        match &self.script[idx].reply {
            Scripted::Reply(text) => Ok(ModelReply::stop(text.clone())),
            Scripted::TransportError(e) => Err(ModelError::Transport(e.clone())),
            Scripted::ProtocolError(e) => Err(ModelError::Protocol(e.clone())),
            Scripted::Refusal(e) => Err(ModelError::Refusal(e.clone())),
        }
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&mut self, messages: &[Message], _params: &ChatParams) -> Result<ModelReply, ModelError> {
        check_request(messages)?;
        self.scripted_complete(messages)
    }
}
