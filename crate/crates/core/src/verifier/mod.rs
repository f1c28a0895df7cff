//! Lean verification: validity, `exact?` novelty and proof checking against
//! a base environment built once from the seed.
//!
//! Backends only run snippets and report raw diagnostics. Turning those into
//! verdicts, including the timeout policy, happens here so the real REPL
//! client and the scripted backend are classified identically.

mod repl;
mod scripted;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ProofScript, TheoremStatement};

pub use repl::{LeanRepl, LeanReplConfig};
pub use scripted::{
    FixtureDiagnostic, FixtureEntry, FixtureFault, ScriptedFixtures, ScriptedVerifier,
};

pub const DEFAULT_COMMAND_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_NOVELTY_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        })
    }
}

/// Line (1-based) and column (0-based) within the submitted snippet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

impl Position {
    pub const START: Position = Position { line: 1, column: 0 };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub position: Position,
    pub message: String,
}

impl Diagnostic {
    pub fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            position: Position::START,
            message: message.into(),
        }
    }

    pub fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(message)
        }
    }

    pub fn info(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Info,
            ..Self::error(message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} {} {}",
            self.position.line, self.position.column, self.severity, self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    Verified,
    Failed,
    Novel,
    Known,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub verdict: Verdict,
    pub diagnostics: Vec<Diagnostic>,
    /// The suggestion `exact?` produced; present iff the verdict is `Known`.
    pub closing_term: Option<String>,
    #[serde(with = "millis")]
    pub elapsed: Duration,
}

impl CheckResult {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(Diagnostic::is_error)
    }

    /// A failed proof check that never reached the verifier.
    pub fn synthetic_failure(message: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Failed,
            diagnostics: vec![Diagnostic::error(message)],
            closing_term: None,
            elapsed: Duration::ZERO,
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Validity,
    Novelty,
    Proof,
}

/// One snippet submission. `context` is the dynamic source (library entries
/// and conjecture list) elaborated on top of the base environment, and
/// `snippet` is the declaration under test.
#[derive(Debug, Clone)]
pub struct CheckRequest<'a> {
    pub kind: CheckKind,
    pub context: &'a str,
    pub statement: &'a TheoremStatement,
    pub proof: Option<&'a ProofScript>,
    pub snippet: String,
}

impl CheckRequest<'_> {
    /// Source submitted to Lean, and the number of lines preceding the snippet.
    pub fn command(&self) -> (String, u32) {
        let mut cmd = String::with_capacity(self.context.len() + self.snippet.len() + 2);
        cmd.push_str(self.context);
        if !cmd.is_empty() && !cmd.ends_with('\n') {
            cmd.push('\n');
        }
        let offset = cmd.matches('\n').count() as u32;
        cmd.push_str(&self.snippet);
        cmd.push('\n');
        (cmd, offset)
    }
}

/// What a backend observed for one submission; positions are already
/// relative to the snippet.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawCheck {
    pub diagnostics: Vec<Diagnostic>,
    /// Number of `sorry` placeholders reported inside the snippet.
    pub sorries: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("command timed out after {0:?}")]
    Timeout(Duration),
    #[error("verifier transport failure: {0}")]
    Transport(String),
}

pub trait VerifierBackend: Send {
    fn name(&self) -> &str;

    /// Build the base environment from `seed`, returning its diagnostics.
    fn open(&mut self, seed: &str) -> Result<Vec<Diagnostic>, BackendError>;

    fn check(
        &mut self,
        request: &CheckRequest<'_>,
        timeout: Duration,
    ) -> Result<RawCheck, BackendError>;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifierError {
    #[error("seed failed to elaborate: {}", format_diagnostics(.0))]
    SeedRejected(Vec<Diagnostic>),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl VerifierError {
    pub fn is_transport(&self) -> bool {
        matches!(self, VerifierError::Backend(BackendError::Transport(_)))
    }
}

pub fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    /// Validity and proof checks.
    #[serde(with = "secs")]
    pub command: Duration,
    #[serde(with = "secs")]
    pub novelty: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            command: DEFAULT_COMMAND_TIMEOUT,
            novelty: DEFAULT_NOVELTY_TIMEOUT,
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

fn is_sorry_warning(d: &Diagnostic) -> bool {
    d.severity == Severity::Warning && d.message.contains("declaration uses 'sorry'")
}

/// Suggestion text from an `exact?` "Try this:" message.
fn closing_suggestion(diags: &[Diagnostic]) -> Option<String> {
    diags.iter().find_map(|d| {
        let (_, rest) = d.message.split_once("Try this:")?;
        Some(rest.trim().to_string())
    })
}

/// A verifier session over one base environment (the seed). Commands are
/// submitted one at a time.
pub struct VerifierSession {
    backend: Box<dyn VerifierBackend>,
    seed_source: String,
    timeouts: Timeouts,
}

impl fmt::Debug for VerifierSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VerifierSession")
            .field("backend", &self.backend.name())
            .field("timeouts", &self.timeouts)
            .finish()
    }
}

impl VerifierSession {
    /// Open a session whose base environment elaborates `seed_source` with
    /// no errors.
    pub fn open(
        mut backend: Box<dyn VerifierBackend>,
        seed_source: &str,
        timeouts: Timeouts,
    ) -> Result<Self, VerifierError> {
        let diagnostics = backend.open(seed_source)?;
        let errors: Vec<Diagnostic> = diagnostics
            .into_iter()
            .filter(Diagnostic::is_error)
            .collect();
        if !errors.is_empty() {
            return Err(VerifierError::SeedRejected(errors));
        }
        Ok(Self {
            backend,
            seed_source: seed_source.to_string(),
            timeouts,
        })
    }

    pub fn seed_source(&self) -> &str {
        &self.seed_source
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    fn submit(
        &mut self,
        kind: CheckKind,
        context: &str,
        statement: &TheoremStatement,
        proof: Option<&ProofScript>,
        snippet: String,
        timeout: Duration,
    ) -> (Result<RawCheck, BackendError>, Duration) {
        let request = CheckRequest {
            kind,
            context,
            statement,
            proof,
            snippet,
        };
        let started = Instant::now();
        let raw = self.backend.check(&request, timeout);
        (raw, started.elapsed())
    }

    /// Elaborate `context` followed by the statement with its `sorry` body.
    /// Valid iff no error diagnostics; a timeout counts as invalid.
    pub fn check_validity(
        &mut self,
        context: &str,
        stmt: &TheoremStatement,
    ) -> Result<CheckResult, VerifierError> {
        let timeout = self.timeouts.command;
        let (raw, elapsed) = self.submit(
            CheckKind::Validity,
            context,
            stmt,
            None,
            stmt.source_text().to_string(),
            timeout,
        );
        let result = match raw {
            Ok(raw) => {
                let verdict = if raw.diagnostics.iter().any(Diagnostic::is_error) {
                    Verdict::Invalid
                } else {
                    Verdict::Valid
                };
                CheckResult {
                    verdict,
                    diagnostics: raw.diagnostics,
                    closing_term: None,
                    elapsed,
                }
            }
            Err(BackendError::Timeout(t)) => CheckResult {
                verdict: Verdict::Invalid,
                diagnostics: vec![Diagnostic::error(format!(
                    "validity check timed out after {}s",
                    t.as_secs()
                ))],
                closing_term: None,
                elapsed,
            },
            Err(e) => return Err(e.into()),
        };
        Ok(result)
    }

    /// Replace the statement's `sorry` with `by exact?`. Known iff `exact?`
    /// closes the goal; a timeout counts as novel.
    pub fn check_novelty(
        &mut self,
        context: &str,
        stmt: &TheoremStatement,
    ) -> Result<CheckResult, VerifierError> {
        let timeout = self.timeouts.novelty;
        let (raw, elapsed) = self.submit(
            CheckKind::Novelty,
            context,
            stmt,
            None,
            stmt.with_exact_query(),
            timeout,
        );
        let result = match raw {
            Ok(raw) => {
                if raw.diagnostics.iter().any(Diagnostic::is_error) {
                    CheckResult {
                        verdict: Verdict::Novel,
                        diagnostics: raw.diagnostics,
                        closing_term: None,
                        elapsed,
                    }
                } else {
                    let term = closing_suggestion(&raw.diagnostics)
                        .unwrap_or_else(|| "exact?".to_string());
                    CheckResult {
                        verdict: Verdict::Known,
                        diagnostics: raw.diagnostics,
                        closing_term: Some(term),
                        elapsed,
                    }
                }
            }
            Err(BackendError::Timeout(t)) => {
                tracing::warn!(
                    theorem = stmt.name(),
                    "exact? timed out; accepting as novel"
                );
                CheckResult {
                    verdict: Verdict::Novel,
                    diagnostics: vec![Diagnostic::warning(format!(
                        "exact? timed out after {}s; treated as novel",
                        t.as_secs()
                    ))],
                    closing_term: None,
                    elapsed,
                }
            }
            Err(e) => return Err(e.into()),
        };
        Ok(result)
    }

    /// Elaborate the statement with `proof`. Verified iff no errors and no
    /// `sorry` remains.
    pub fn verify_proof(
        &mut self,
        context: &str,
        stmt: &TheoremStatement,
        proof: &ProofScript,
    ) -> Result<CheckResult, VerifierError> {
        let timeout = self.timeouts.command;
        let (raw, elapsed) = self.submit(
            CheckKind::Proof,
            context,
            stmt,
            Some(proof),
            stmt.with_proof(proof.text()),
            timeout,
        );
        let result = match raw {
            Ok(mut raw) => {
                let sorry_left = raw.sorries > 0 || raw.diagnostics.iter().any(is_sorry_warning);
                let errors = raw.diagnostics.iter().any(Diagnostic::is_error);
                if sorry_left && !errors {
                    raw.diagnostics
                        .push(Diagnostic::error("proof leaves goals closed by `sorry`"));
                }
                CheckResult {
                    verdict: if errors || sorry_left {
                        Verdict::Failed
                    } else {
                        Verdict::Verified
                    },
                    diagnostics: raw.diagnostics,
                    closing_term: None,
                    elapsed,
                }
            }
            Err(BackendError::Timeout(t)) => CheckResult {
                verdict: Verdict::Failed,
                diagnostics: vec![Diagnostic::error(format!(
                    "proof check timed out after {}s",
                    t.as_secs()
                ))],
                closing_term: None,
                elapsed,
            },
            Err(e) => return Err(e.into()),
        };
        Ok(result)
    }
}

/// Map diagnostics from whole-command coordinates to snippet coordinates.
/// Non-error diagnostics located in the context are dropped; errors located
/// there are reported at the snippet start.
pub fn rebase_diagnostics(diags: Vec<Diagnostic>, context_lines: u32) -> Vec<Diagnostic> {
    diags
        .into_iter()
        .filter_map(|d| {
            if d.position.line > context_lines {
                Some(Diagnostic {
                    position: Position {
                        line: d.position.line - context_lines,
                        column: d.position.column,
                    },
                    ..d
                })
            } else if d.is_error() {
                Some(Diagnostic {
                    position: Position::START,
                    message: format!("in context (line {}): {}", d.position.line, d.message),
                    ..d
                })
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(line: u32, severity: Severity, msg: &str) -> Diagnostic {
        Diagnostic {
            severity,
            position: Position { line, column: 2 },
            message: msg.into(),
        }
    }

    #[test]
    fn rebasing_keeps_snippet_lines_only() {
        let diags = vec![
            at(2, Severity::Warning, "declaration uses 'sorry'"),
            at(3, Severity::Error, "broken context"),
            at(5, Severity::Error, "unknown identifier"),
        ];
        let out = rebase_diagnostics(diags, 4);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].position, Position::START);
        assert!(out[0].message.starts_with("in context (line 3)"));
        assert_eq!(out[1].position, Position { line: 1, column: 2 });
        assert!(out.iter().all(|d| d.position.line >= 1));
    }

    #[test]
    fn command_layout() {
        let stmt = TheoremStatement::from_signature("a", ": 1 = 1").unwrap();
        let req = CheckRequest {
            kind: CheckKind::Validity,
            context: "\ntheorem b : 2 = 2 := rfl\n",
            statement: &stmt,
            proof: None,
            snippet: stmt.source_text().into(),
        };
        let (cmd, offset) = req.command();
        assert_eq!(
            cmd,
            "\ntheorem b : 2 = 2 := rfl\ntheorem a : 1 = 1 := sorry\n"
        );
        assert_eq!(offset, 2);
        assert_eq!(
            cmd.lines().nth(offset as usize),
            Some("theorem a : 1 = 1 := sorry")
        );
    }

    #[test]
    fn diagnostic_display() {
        let d = at(3, Severity::Error, "type mismatch");
        assert_eq!(d.to_string(), "3:2 error type mismatch");
    }
}
