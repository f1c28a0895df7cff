//! Chat-completion gateway: one interface over remote and replayed models,
//! with retry, per-role call accounting, transcript logging and recording.

pub mod prompts;
mod providers;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use providers::{
    record_file, ChatProvider, DryRunProvider, ProviderError, RateLimiter, RecordedExchange,
    RemoteProvider, ReplayProvider,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Conjecturer,
    Prover,
    SimpleLoop,
    NlProver,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Conjecturer,
        Role::Prover,
        Role::SimpleLoop,
        Role::NlProver,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Conjecturer => "conjecturer",
            Role::Prover => "prover",
            Role::SimpleLoop => "simple_loop",
            Role::NlProver => "nl_prover",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub temperature: f64,
    /// Output token cap; `None` leaves the provider default in place.
    pub max_output: Option<u32>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub system_prompt: String,
    pub user_content: String,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Completion text; empty means the model declined to answer.
    pub text: String,
    pub provider: String,
    pub latency: Duration,
    pub attempt: u32,
}

/// Strip trailing newlines; whitespace-only output becomes empty.
pub fn normalize_completion(text: &str) -> String {
    if text.trim().is_empty() {
        return String::new();
    }
    text.trim_end_matches(['\n', '\r']).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts per call, including the first.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 1000,
            multiplier: 2.0,
            max_backoff_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{role} call failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        role: Role,
        attempts: u32,
        last: String,
    },
    #[error("fatal provider error: {0}")]
    Fatal(String),
    #[error("replay fixtures exhausted for role {role} at call {index}")]
    FixtureExhausted { role: Role, index: usize },
    #[error("no provider configured for role {0}")]
    NoProvider(Role),
    #[error("transcript or record I/O failed: {0}")]
    Io(#[from] io::Error),
}

impl GatewayError {
    /// Errors that must stop the run rather than count as a failed trial.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, GatewayError::RetriesExhausted { .. })
    }
}

/// Persists every exchange per role so a replay provider can reproduce it.
#[derive(Debug)]
pub struct Recorder {
    dir: PathBuf,
    files: Mutex<HashMap<Role, File>>,
}

impl Recorder {
    /// Fails if `dir` cannot be created or written.
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let probe = dir.join(".write-probe");
        fs::write(&probe, b"")?;
        fs::remove_file(&probe)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Mutex::new(HashMap::new()),
        })
    }

    fn record(&self, request: &ChatRequest, index: usize, response: &str) -> io::Result<()> {
        let mut files = self.files.lock().expect("recorder poisoned");
        let file = match files.entry(request.role) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => v.insert(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(record_file(&self.dir, request.role))?,
            ),
        };
        let ex = RecordedExchange {
            index,
            system_prompt: request.system_prompt.clone(),
            user_content: request.user_content.clone(),
            response: response.to_string(),
        };
        writeln!(file, "{}", serde_json::to_string(&ex)?)?;
        file.flush()
    }
}

/// Routes requests to providers by role.
pub struct Gateway {
    providers: HashMap<Role, Arc<dyn ChatProvider>>,
    retry: RetryPolicy,
    transcript: Option<Mutex<File>>,
    recorder: Option<Recorder>,
    calls: Mutex<BTreeMap<Role, usize>>,
    exchanges: Mutex<u64>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("roles", &self.providers.keys().collect::<Vec<_>>())
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(retry: RetryPolicy) -> Self {
        Self {
            providers: HashMap::new(),
            retry,
            transcript: None,
            recorder: None,
            calls: Mutex::new(BTreeMap::new()),
            exchanges: Mutex::new(0),
        }
    }

    /// Use `provider` for every role.
    pub fn with_provider(retry: RetryPolicy, provider: Arc<dyn ChatProvider>) -> Self {
        let mut gw = Self::new(retry);
        for role in Role::ALL {
            gw.set_provider(role, provider.clone());
        }
        gw
    }

    pub fn set_provider(&mut self, role: Role, provider: Arc<dyn ChatProvider>) {
        self.providers.insert(role, provider);
    }

    /// Append one JSON object per attempt to `path`.
    pub fn log_transcript_to(&mut self, path: &Path) -> io::Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.transcript = Some(Mutex::new(file));
        Ok(())
    }

    pub fn record_to(&mut self, recorder: Recorder) {
        self.recorder = Some(recorder);
    }

    /// Calls issued so far, per role.
    pub fn call_counts(&self) -> BTreeMap<Role, usize> {
        self.calls.lock().expect("call counter poisoned").clone()
    }

    /// Resume call numbering, e.g. to fast-forward replay after a restart.
    pub fn set_call_counts(&self, counts: &BTreeMap<Role, usize>) {
        *self.calls.lock().expect("call counter poisoned") = counts.clone();
    }

    fn next_index(&self, role: Role) -> usize {
        let mut calls = self.calls.lock().expect("call counter poisoned");
        let slot = calls.entry(role).or_insert(0);
        let index = *slot;
        *slot += 1;
        index
    }

    fn log(
        &self,
        request: &ChatRequest,
        provider: &str,
        index: usize,
        attempt: u32,
        latency: Duration,
        outcome: Result<&str, &str>,
    ) -> io::Result<()> {
        let Some(transcript) = &self.transcript else {
            return Ok(());
        };
        let mut seq = self.exchanges.lock().expect("transcript counter poisoned");
        let mut entry = json!({
            "seq": *seq,
            "role": request.role,
            "call_index": index,
            "attempt": attempt,
            "provider": provider,
            "latency_ms": latency.as_millis() as u64,
            "temperature": request.sampling.temperature,
            "system_prompt": request.system_prompt,
            "user_content": request.user_content,
        });
        match outcome {
            Ok(text) => entry["response"] = json!(text),
            Err(e) => entry["error"] = json!(e),
        }
        *seq += 1;
        let mut file = transcript.lock().expect("transcript poisoned");
        writeln!(file, "{entry}")?;
        file.flush()
    }

    /// Send `request` to its role's provider, retrying transport failures
    /// with exponential backoff.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let provider = self
            .providers
            .get(&request.role)
            .ok_or(GatewayError::NoProvider(request.role))?;
        let index = self.next_index(request.role);
        let max = self.retry.max_attempts.max(1);
        let mut last = String::new();

        for attempt in 1..=max {
            let started = Instant::now();
            let result = provider.send(request, index);
            let latency = started.elapsed();
            match result {
                Ok(raw) => {
                    let text = normalize_completion(&raw);
                    self.log(request, provider.name(), index, attempt, latency, Ok(&text))?;
                    if let Some(rec) = &self.recorder {
                        rec.record(request, index, &text)?;
                    }
                    return Ok(ChatResponse {
                        text,
                        provider: provider.name().to_string(),
                        latency,
                        attempt,
                    });
                }
                Err(ProviderError::Transport(e)) => {
                    tracing::warn!(role = %request.role, attempt, "transport failure: {e}");
                    self.log(request, provider.name(), index, attempt, latency, Err(&e))?;
                    last = e;
                    if attempt < max {
                        std::thread::sleep(self.retry.backoff(attempt));
                    }
                }
                Err(ProviderError::Fatal(e)) => {
                    self.log(request, provider.name(), index, attempt, latency, Err(&e))?;
                    return Err(GatewayError::Fatal(e));
                }
                Err(ProviderError::FixtureExhausted { role, index }) => {
                    let msg = format!("replay fixtures exhausted at call {index}");
                    self.log(request, provider.name(), index, attempt, latency, Err(&msg))?;
                    return Err(GatewayError::FixtureExhausted { role, index });
                }
            }
        }
        Err(GatewayError::RetriesExhausted {
            role: request.role,
            attempts: max,
            last,
        })
    }
}
