use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatRequest, Role};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Worth retrying: network failure, rate limiting, server error.
    #[error("transport error: {0}")]
    Transport(String),
    /// Authentication or configuration problem; retrying will not help.
    #[error("{0}")]
    Fatal(String),
    #[error("replay fixtures exhausted for role {role} at call {index}")]
    FixtureExhausted { role: Role, index: usize },
}

/// Something that turns a chat request into completion text.
///
/// `call_index` is the per-role sequence number of the call, which replay
/// providers use as their lookup key. Retries of one call share its index.
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;

    fn send(&self, request: &ChatRequest, call_index: usize) -> Result<String, ProviderError>;
}

/// Token-bucket pacing shared by every caller of one provider.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self {
            per_second,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    /// Time until a token is available, consuming it.
    fn reserve(&self) -> Duration {
        let mut state = self.state.lock().expect("rate limiter poisoned");
        let (tokens, last) = &mut *state;
        let now = Instant::now();
        *tokens =
            (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second).min(self.burst);
        *last = now;
        *tokens -= 1.0;
        if *tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-*tokens / self.per_second)
        }
    }

    pub fn acquire(&self) {
        if self.per_second <= 0.0 {
            return;
        }
        let wait = self.reserve();
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Remote chat-completions endpoint using the widely deployed
/// `{"model", "messages", "temperature"}` request schema.
pub struct RemoteProvider {
    name: String,
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
}

impl RemoteProvider {
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key: String,
        request_timeout: Duration,
        limiter: RateLimiter,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| ProviderError::Fatal(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            name: format!("remote:{model}"),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client,
            limiter,
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_content},
            ],
            "temperature": request.sampling.temperature,
        });
        if let Some(max) = request.sampling.max_output {
            body["max_completion_tokens"] = json!(max);
        }
        body
    }
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl ChatProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &ChatRequest, _call_index: usize) -> Result<String, ProviderError> {
        self.limiter.acquire();
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(request))
            .send()
            .map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Fatal(format!(
                "chat endpoint rejected the credential (HTTP {status}); check the API key environment variable"
            )));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transport(format!("HTTP {status}")));
        }
        let body: serde_json::Value = response
            .json()
            .map_err(|e| ProviderError::Transport(format!("invalid response body: {e}")))?;
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!(
                "chat endpoint returned HTTP {status}: {body}"
            )));
        }
        body.pointer("/choices/0/message/content")
            .map(|c| c.as_str().unwrap_or_default().to_string())
            .ok_or_else(|| {
                ProviderError::Transport(format!("no choices[0].message.content in {body}"))
            })
    }
}

/// One persisted exchange in a record directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub index: usize,
    pub system_prompt: String,
    pub user_content: String,
    pub response: String,
}

pub fn record_file(dir: &Path, role: Role) -> PathBuf {
    dir.join(format!("{}.jsonl", role.as_str()))
}

/// Serves recorded responses keyed by (role, per-role call index).
#[derive(Debug, Default)]
pub struct ReplayProvider {
    responses: HashMap<Role, Vec<String>>,
}

impl ReplayProvider {
    pub fn from_responses(responses: HashMap<Role, Vec<String>>) -> Self {
        Self { responses }
    }

    /// Load `<role>.jsonl` files from a record directory. Missing files are
    /// treated as empty so the first call for that role reports exhaustion.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut responses = HashMap::new();
        for role in Role::ALL {
            let path = record_file(dir, role);
            if !path.exists() {
                continue;
            }
            let mut items: Vec<RecordedExchange> = Vec::new();
            for (lineno, line) in fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let ex: RecordedExchange = serde_json::from_str(line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), lineno + 1),
                    )
                })?;
                items.push(ex);
            }
            items.sort_by_key(|e| e.index);
            responses.insert(role, items.into_iter().map(|e| e.response).collect());
        }
        Ok(Self { responses })
    }
}

impl ChatProvider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }

    fn send(&self, request: &ChatRequest, call_index: usize) -> Result<String, ProviderError> {
        self.responses
            .get(&request.role)
            .and_then(|r| r.get(call_index))
            .cloned()
            .ok_or(ProviderError::FixtureExhausted {
                role: request.role,
                index: call_index,
            })
    }
}

/// Instant canned responses for counting protocol steps without a model.
/// Conjectures are distinct per call; proofs never verify under the
/// scripted verifier's defaults.
#[derive(Debug, Default)]
pub struct DryRunProvider;

impl ChatProvider for DryRunProvider {
    fn name(&self) -> &str {
        "dry-run"
    }

    fn send(&self, request: &ChatRequest, call_index: usize) -> Result<String, ProviderError> {
        let i = call_index;
        Ok(match request.role {
            Role::Conjecturer => format!("theorem dry_run_{i} : ({i} : ℕ) = {i} := sorry"),
            Role::Prover => "by\n  simp".to_string(),
            Role::SimpleLoop => {
                format!("theorem dry_run_simple_{i} : ({i} : ℕ) + 0 = {i} := by\n  simp")
            }
            Role::NlProver => "False".to_string(),
        })
    }
}
