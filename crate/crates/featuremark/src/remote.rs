//! Candidate generation through an OpenAI-compatible chat completions
//! endpoint.

use std::path::Path;
use std::thread;
use std::time::Duration;

use featuremark_core::{GenerationParams, GeneratorAdapter, GeneratorError};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const ENV_API_BASE: &str = "FEATUREMARK_API_BASE";
pub const ENV_API_KEY: &str = "FEATUREMARK_API_KEY";
pub const ENV_MODEL: &str = "FEATUREMARK_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub api_base: String,
    #[serde(default)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            api_base: api_base.into(),
            api_key: None,
            model: model.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }

    /// Read a JSON config file, then let the environment override the
    /// endpoint and key.
    pub fn load(path: Option<&Path>) -> Result<Self, GeneratorError> {
        let unavailable = |m: String| GeneratorError::Unavailable(m);
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| unavailable(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| unavailable(format!("{}: {e}", p.display())))?
            }
            None => {
                let base = std::env::var(ENV_API_BASE)
                    .map_err(|_| unavailable(format!("{ENV_API_BASE} is not set")))?;
                let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into());
                RemoteConfig::new(base, model)
            }
        };
        if let Ok(base) = std::env::var(ENV_API_BASE) {
            cfg.api_base = base;
        }
        if let Ok(key) = std::env::var(ENV_API_KEY) {
            cfg.api_key = Some(key);
        }
        Ok(cfg)
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Candidate texts from a chat completions response body, in choice order.
pub fn parse_chat_response(body: &str) -> Result<Vec<String>, GeneratorError> {
    let resp: ChatResponse = serde_json::from_str(body)
        .map_err(|e| GeneratorError::Unavailable(format!("unparseable completion: {e}")))?;
    Ok(resp
        .choices
        .into_iter()
        .map(|c| c.message.content.unwrap_or_default())
        .collect())
}

pub fn chat_request_body(
    model: &str,
    context: &str,
    n: usize,
    params: &GenerationParams,
    seed: u64,
) -> serde_json::Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": context}],
        "n": n,
        "temperature": params.temperature,
        "max_tokens": params.max_new_tokens,
        // Servers that honour it make runs repeatable; others ignore it.
        "seed": seed,
    })
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

#[derive(Debug)]
pub struct RemoteGenerator {
    config: RemoteConfig,
    agent: ureq::Agent,
    id: String,
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let id = format!("remote/{}", config.model);
        RemoteGenerator { config, agent, id }
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.config.api_base.trim_end_matches('/')
        )
    }

    fn request_once(&self, body: &serde_json::Value) -> Result<Vec<String>, Failure> {
        let mut req = self.agent.post(self.endpoint());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        if status.is_success() {
            return parse_chat_response(&text).map_err(|e| Failure::Fatal(e.to_string()));
        }
        let msg = format!("HTTP {status}: {text}");
        if status.as_u16() == 429 || status.is_server_error() {
            Err(Failure::Retryable(msg))
        } else {
            Err(Failure::Fatal(msg))
        }
    }

    /// One request with up to `retries` retries and doubling backoff.
    fn request(&self, body: &serde_json::Value) -> Result<Vec<String>, GeneratorError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.request_once(body) {
                Ok(c) => return Ok(c),
                Err(Failure::Fatal(m)) => return Err(GeneratorError::Unavailable(m)),
                Err(Failure::Retryable(m)) if attempt >= self.config.retries => {
                    return Err(GeneratorError::Unavailable(format!(
                        "{m} (after {} retries)",
                        self.config.retries
                    )))
                }
                Err(Failure::Retryable(_)) => {
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

impl GeneratorAdapter for RemoteGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_parallel(&self) -> bool {
        true
    }

    /// Some servers cap `n`; keep asking for the remainder until `n`
    /// candidates have arrived.
    fn generate(
        &self,
        context: &str,
        n: usize,
        params: &GenerationParams,
        trial_seed: u64,
    ) -> Result<Vec<String>, GeneratorError> {
        let mut out = Vec::with_capacity(n);
        let mut round = 0u64;
        while out.len() < n {
            let body = chat_request_body(
                &self.config.model,
                context,
                n - out.len(),
                params,
                trial_seed.wrapping_add(round),
            );
            let got = self.request(&body)?;
            if got.is_empty() {
                return Err(GeneratorError::WrongCount {
                    expected: n,
                    got: out.len(),
                });
            }
            out.extend(got);
            round += 1;
        }
        out.truncate(n);
        Ok(out)
    }
}
