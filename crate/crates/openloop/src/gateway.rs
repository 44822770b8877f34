//! Blocking client for OpenAI-compatible chat-completion endpoints.

use std::thread;
use std::time::Duration;

use log::warn;
use openloop_core::model::wire::{self, ChatRequest, COMPLETIONS_PATH};
use openloop_core::model::{check_request, ChatModel, ChatParams, FinishReason, ModelError, ModelReply};
use openloop_core::Message;

pub const API_KEY_ENV: &str = "OPENLOOP_API_KEY";

const DEFAULT_BACKOFF: Duration = Duration::from_millis(500);

/// One endpoint, one blocking request per call.
///
/// Transport failures (connection errors, timeouts, 429 and 5xx answers)
/// are retried up to `max_retries` times with exponential backoff.
#[derive(Debug, Clone)]
pub struct HttpGateway {
    url: String,
    api_key: Option<String>,
    backoff: Duration,
}

impl HttpGateway {
    /// `endpoint` is a base URL such as `http://localhost:8000`; the
    /// completions path is appended unless already present.
    pub fn new(endpoint: &str, api_key: Option<String>) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else if let Some(stripped) = base.strip_suffix("/v1") {
            format!("{stripped}{COMPLETIONS_PATH}")
        } else {
            format!("{base}{COMPLETIONS_PATH}")
        };
        HttpGateway {
            url,
            api_key,
            backoff: DEFAULT_BACKOFF,
        }
    }

    /// Picks up the API key from `OPENLOOP_API_KEY` when `api_key` is `None`.
    pub fn from_env(endpoint: &str, api_key: Option<String>) -> Self {
        let key = api_key.or_else(|| std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()));
        Self::new(endpoint, key)
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &str, params: &ChatParams) -> Result<ModelReply, ModelError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(params.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&self.url).content_type("application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let bytes = resp.body_mut().read_to_vec().map_err(transport)?;
        if status == 429 || status >= 500 {
            return Err(ModelError::Transport(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let snippet = String::from_utf8_lossy(&bytes[..bytes.len().min(200)]).into_owned();
            return Err(ModelError::Protocol(format!("HTTP {status}: {snippet}")));
        }
        let reply = wire::parse_response(&bytes)?;
        if reply.finish_reason == FinishReason::Error {
            return Err(ModelError::Refusal("completion finished with an error reason".into()));
        }
        Ok(reply)
    }
}

fn transport(e: ureq::Error) -> ModelError {
    ModelError::Transport(e.to_string())
}

impl ChatModel for HttpGateway {
    fn complete(&mut self, messages: &[Message], params: &ChatParams) -> Result<ModelReply, ModelError> {
        check_request(messages)?;
        let body = ChatRequest::new(messages, params).to_json();
        let mut attempt = 0u32;
        loop {
            match self.attempt(&body, params) {
                Err(e) if e.is_transport() && attempt < u32::from(params.max_retries) => {
                    let wait = self.backoff * 2u32.pow(attempt);
                    warn!("model call failed ({e}), retrying in {wait:?}");
                    thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
