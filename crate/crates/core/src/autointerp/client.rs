use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{display_token, RescaledFragment, MAX_LEVEL};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    /// Connection failures, timeouts, 429 and 5xx responses.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

impl ClientError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ClientError::Transient(_))
    }
}

pub struct ExplainRequest<'a> {
    pub feature: usize,
    pub prompt: &'a str,
    pub examples: &'a [RescaledFragment],
}

/// `fragment.levels` are the true levels. Real clients must send only
/// `prompt`; mocks may peek at the levels.
pub struct SimulateRequest<'a> {
    pub feature: usize,
    pub prompt: &'a str,
    pub explanation: &'a str,
    pub fragment: &'a RescaledFragment,
}

/// The explainer/simulator model. Both calls return the raw assistant text.
pub trait SimulatorClient: Sync {
    fn explain(&self, req: &ExplainRequest<'_>) -> std::result::Result<String, ClientError>;
    fn simulate(&self, req: &SimulateRequest<'_>) -> std::result::Result<String, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base · 2^(attempt−1)`.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << (attempt.saturating_sub(1)).min(16))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockKind {
    /// Returns the true levels.
    Perfect,
    /// Returns 5 everywhere.
    Constant,
    /// True levels plus a seeded jitter in {−1, 0, +1}, clipped to 0–10.
    Noisy { seed: u64 },
}

/// Offline simulator answering in the same wire format as a real model.
#[derive(Debug, Clone, Copy)]
pub struct MockClient {
    pub kind: MockKind,
}

impl MockClient {
    pub fn new(kind: MockKind) -> Self {
        MockClient { kind }
    }
}

impl SimulatorClient for MockClient {
    fn explain(&self, req: &ExplainRequest<'_>) -> std::result::Result<String, ClientError> {
        Ok(format!("mock explanation for feature {}", req.feature))
    }

    fn simulate(&self, req: &SimulateRequest<'_>) -> std::result::Result<String, ClientError> {
        let f = req.fragment;
        let levels: Vec<u8> = match self.kind {
            MockKind::Perfect => f.levels.clone(),
            MockKind::Constant => vec![5; f.levels.len()],
            MockKind::Noisy { seed } => {
                let key = seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(f.doc_id.rotate_left(32))
                    ^ f.offset;
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                f.levels
                    .iter()
                    .map(|&l| (i16::from(l) + rng.random_range(-1i16..=1)).clamp(0, i16::from(MAX_LEVEL)) as u8)
                    .collect()
            }
        };
        Ok(f.tokens
            .iter()
            .zip(levels)
            .map(|(t, l)| format!("{}\t{l}\n", display_token(t)))
            .collect())
    }
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub const ENDPOINT_VAR: &'static str = "AUTOINTERP_ENDPOINT";
    pub const MODEL_VAR: &'static str = "AUTOINTERP_MODEL";
    pub const KEY_VAR: &'static str = "AUTOINTERP_API_KEY";

    /// Reads `AUTOINTERP_ENDPOINT`, `AUTOINTERP_MODEL` and the optional
    /// `AUTOINTERP_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let var = |name: &str| {
            std::env::var(name).map_err(|_| Error::arg(format!("environment variable {name} is not set")))
        };
        Ok(HttpConfig {
            endpoint: var(Self::ENDPOINT_VAR)?,
            model: var(Self::MODEL_VAR)?,
            api_key: std::env::var(Self::KEY_VAR).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
        })
    }
}

pub struct HttpClient {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        HttpClient { config, agent }
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, ClientError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(classify)?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Fatal(format!("unreadable response body: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| ClientError::Fatal(format!("response has no message content: {value}")))
    }
}

fn classify(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ClientError::Transient(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => ClientError::Fatal(format!("HTTP {code}")),
        ureq::Error::Io(e) => ClientError::Transient(e.to_string()),
        ureq::Error::Timeout(t) => ClientError::Transient(format!("timeout ({t})")),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => ClientError::Transient(e.to_string()),
        other => ClientError::Fatal(other.to_string()),
    }
}

impl SimulatorClient for HttpClient {
    fn explain(&self, req: &ExplainRequest<'_>) -> std::result::Result<String, ClientError> {
        self.complete(req.prompt)
    }

    fn simulate(&self, req: &SimulateRequest<'_>) -> std::result::Result<String, ClientError> {
        self.complete(req.prompt)
    }
}
