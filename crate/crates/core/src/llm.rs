//! Blocking client for chat-completion style endpoints, shared by the
//! segmentation, rephrasing and judge backends.

use std::env;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    BadResponse(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::Http { status, .. } => *status == 429 || *status >= 500,
            LlmError::BadResponse(_) | LlmError::MissingCredential(_) => false,
        }
    }
}

/// Something that turns a prompt into a completion.
pub trait LlmTransport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

impl<F> LlmTransport for F
where
    F: Fn(&str) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self(prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        RetryPolicy { retries, base_delay: Duration::ZERO }
    }

    /// Runs `op`, retrying retriable failures with exponential backoff.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retriable() && attempt < self.retries => {
                    let delay = self.base_delay * 2u32.saturating_pow(attempt);
                    log::warn!("retriable backend failure ({e}); retry {} in {:?}", attempt + 1, delay);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Connection settings for a remote model endpoint. Credentials are only
/// ever read from the environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            api_key_env: None,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { retries: self.retries, ..RetryPolicy::default() }
    }
}

/// OpenAI-compatible `chat/completions` transport, temperature pinned to 0.
pub struct ChatCompletionsTransport {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ChatCompletionsTransport {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(env::var(var).map_err(|_| LlmError::MissingCredential(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(ChatCompletionsTransport { config, api_key, agent })
    }
}

impl LlmTransport for ChatCompletionsTransport {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::Http { status, body });
        }
        let value: Value = resp.body_mut().read_json().map_err(|e| LlmError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse(value.to_string()))
    }
}

pub(crate) fn map_ureq(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::StatusCode(status) => LlmError::Http { status, body: String::new() },
        other => LlmError::Transport(other.to_string()),
    }
}
