//! Client for a Lean REPL child process speaking JSON over stdio.
//!
//! Requests are `{"cmd": ..., "env": ...}` objects terminated by a blank
//! line; responses are JSON objects, possibly pretty-printed over several
//! lines. A command that exceeds its timeout cannot be interrupted, so the
//! process is killed and the base environment rebuilt on the next command.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    rebase_diagnostics, BackendError, CheckRequest, Diagnostic, Position, RawCheck, Severity,
    VerifierBackend,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeanReplConfig {
    /// Program and arguments, e.g. `["lake", "exe", "repl"]`.
    pub command: Vec<String>,
    /// Lean project directory with Mathlib available.
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    /// Budget for elaborating the seed, which includes importing Mathlib.
    #[serde(default = "LeanReplConfig::default_startup_secs")]
    pub startup_timeout_secs: u64,
}

impl LeanReplConfig {
    fn default_startup_secs() -> u64 {
        1800
    }

    /// REPL command from `CPL_LEAN_REPL` (whitespace separated) and project
    /// directory from `CPL_LEAN_PROJECT`. `None` when the command is unset.
    pub fn from_env() -> Option<Self> {
        let command: Vec<String> = std::env::var("CPL_LEAN_REPL")
            .ok()?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if command.is_empty() {
            return None;
        }
        Some(Self {
            command,
            working_dir: std::env::var_os("CPL_LEAN_PROJECT").map(PathBuf::from),
            ..Self::default()
        })
    }
}

impl Default for LeanReplConfig {
    fn default() -> Self {
        Self {
            command: vec!["lake".into(), "exe".into(), "repl".into()],
            working_dir: None,
            startup_timeout_secs: Self::default_startup_secs(),
        }
    }
}

struct ReplProcess {
    child: Child,
    stdin: ChildStdin,
    responses: Receiver<Result<Value, String>>,
}

impl ReplProcess {
    fn spawn(config: &LeanReplConfig) -> Result<Self, BackendError> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| BackendError::Transport("empty REPL command".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if let Some(dir) = &config.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| BackendError::Transport(format!("failed to start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buffer = String::new();
            for line in BufReader::new(stdout).lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = tx.send(Err(e.to_string()));
                        return;
                    }
                };
                if line.trim().is_empty() {
                    if !buffer.trim().is_empty() {
                        let parsed = serde_json::from_str(&buffer).map_err(|e| e.to_string());
                        buffer.clear();
                        if tx.send(parsed).is_err() {
                            return;
                        }
                    }
                    continue;
                }
                buffer.push_str(&line);
                buffer.push('\n');
                if let Ok(value) = serde_json::from_str::<Value>(&buffer) {
                    buffer.clear();
                    if tx.send(Ok(value)).is_err() {
                        return;
                    }
                }
            }
            let _ = tx.send(Err("REPL process closed its output".into()));
        });

        Ok(Self {
            child,
            stdin,
            responses: rx,
        })
    }

    fn request(&mut self, payload: &Value, timeout: Duration) -> Result<Value, BackendError> {
        let line = serde_json::to_string(payload).expect("serializable request");
        writeln!(self.stdin, "{line}\n")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| BackendError::Transport(format!("write to REPL failed: {e}")))?;
        match self.responses.recv_timeout(timeout) {
            Ok(Ok(value)) => Ok(value),
            Ok(Err(e)) => Err(BackendError::Transport(e)),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(BackendError::Transport("REPL reader stopped".into()))
            }
        }
    }
}

impl Drop for ReplProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug, Deserialize)]
struct ReplPos {
    line: u32,
    column: u32,
}

#[derive(Debug, Deserialize)]
struct ReplMessage {
    severity: String,
    pos: ReplPos,
    data: String,
}

#[derive(Debug, Deserialize)]
struct ReplResponse {
    env: Option<u64>,
    #[serde(default)]
    messages: Vec<ReplMessage>,
    #[serde(default)]
    sorries: Vec<Value>,
    message: Option<String>,
}

fn parse_response(value: Value) -> Result<(u64, Vec<Diagnostic>, Vec<u32>), BackendError> {
    let resp: ReplResponse = serde_json::from_value(value)
        .map_err(|e| BackendError::Transport(format!("unexpected REPL response: {e}")))?;
    let env = match (resp.env, resp.message) {
        (Some(env), _) => env,
        (None, Some(msg)) => return Err(BackendError::Transport(format!("REPL error: {msg}"))),
        (None, None) => return Err(BackendError::Transport("REPL response without env".into())),
    };
    let diagnostics = resp
        .messages
        .into_iter()
        .map(|m| Diagnostic {
            severity: match m.severity.as_str() {
                "error" => Severity::Error,
                "warning" => Severity::Warning,
                _ => Severity::Info,
            },
            position: Position {
                line: m.pos.line,
                column: m.pos.column,
            },
            message: m.data,
        })
        .collect();
    let sorry_lines = resp
        .sorries
        .iter()
        .filter_map(|s| s.pointer("/pos/line").and_then(Value::as_u64))
        .map(|l| l as u32)
        .collect();
    Ok((env, diagnostics, sorry_lines))
}

fn with_mathlib_import(seed: &str) -> String {
    if seed.lines().any(|l| l.trim() == "import Mathlib") {
        seed.to_string()
    } else {
        format!("import Mathlib\n{seed}")
    }
}

/// Verifier backend talking to a real Lean REPL.
pub struct LeanRepl {
    config: LeanReplConfig,
    process: Option<ReplProcess>,
    base_env: Option<u64>,
    seed: String,
}

impl LeanRepl {
    pub fn new(config: LeanReplConfig) -> Self {
        Self {
            config,
            process: None,
            base_env: None,
            seed: String::new(),
        }
    }

    fn startup_timeout(&self) -> Duration {
        Duration::from_secs(self.config.startup_timeout_secs)
    }

    fn start(&mut self) -> Result<Vec<Diagnostic>, BackendError> {
        self.process = None;
        self.base_env = None;
        let mut process = ReplProcess::spawn(&self.config)?;
        let payload = json!({ "cmd": with_mathlib_import(&self.seed) });
        let value = process.request(&payload, self.startup_timeout())?;
        let (env, diagnostics, _) = parse_response(value)?;
        self.process = Some(process);
        self.base_env = Some(env);
        Ok(diagnostics)
    }
}

impl VerifierBackend for LeanRepl {
    fn name(&self) -> &str {
        "lean-repl"
    }

    fn open(&mut self, seed: &str) -> Result<Vec<Diagnostic>, BackendError> {
        self.seed = seed.to_string();
        self.start()
    }

    fn check(
        &mut self,
        request: &CheckRequest<'_>,
        timeout: Duration,
    ) -> Result<RawCheck, BackendError> {
        if self.process.is_none() {
            tracing::info!("restarting Lean REPL and rebuilding the base environment");
            self.start()?;
        }
        let env = self
            .base_env
            .expect("base environment exists while process is alive");
        let (cmd, context_lines) = request.command();
        let payload = json!({ "cmd": cmd, "env": env });
        let process = self.process.as_mut().expect("checked above");
        let value = match process.request(&payload, timeout) {
            Ok(v) => v,
            Err(e) => {
                // The process is either hung or dead; either way it is unusable.
                self.process = None;
                return Err(e);
            }
        };
        let (_, diagnostics, sorry_lines) = parse_response(value)?;
        Ok(RawCheck {
            diagnostics: rebase_diagnostics(diagnostics, context_lines),
            sorries: sorry_lines.iter().filter(|&&l| l > context_lines).count(),
        })
    }
}
