//! Deterministic offline backend driven by a fixture map.
//!
//! Lookup key is (check kind, normalized statement, proof hash). Keys not in
//! the map fall back to a few context-aware rules that mirror Lean (duplicate
//! names are invalid, a statement already in context is known) and then to
//! per-kind default verdicts.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, CheckKind, CheckRequest, Diagnostic, Position, RawCheck, Severity, Verdict,
    VerifierBackend,
};
use crate::model::{
    declared_names, normalize_statement, parse_theorem_declarations, scan_theorem_statements,
    TheoremStatement,
};

fn default_validity() -> Verdict {
    Verdict::Valid
}
fn default_novelty() -> Verdict {
    Verdict::Novel
}
fn default_proof() -> Verdict {
    Verdict::Failed
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defaults {
    #[serde(default = "default_validity")]
    pub validity: Verdict,
    #[serde(default = "default_novelty")]
    pub novelty: Verdict,
    #[serde(default = "default_proof")]
    pub proof: Verdict,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            validity: default_validity(),
            novelty: default_novelty(),
            proof: default_proof(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureFault {
    Timeout,
    Transport,
    /// A transport failure the first time the key is hit, then the verdict.
    TransportOnce,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureDiagnostic {
    #[serde(default = "FixtureDiagnostic::default_severity")]
    pub severity: Severity,
    #[serde(default = "FixtureDiagnostic::default_line")]
    pub line: u32,
    #[serde(default)]
    pub column: u32,
    pub message: String,
}

impl FixtureDiagnostic {
    fn default_severity() -> Severity {
        Severity::Error
    }
    fn default_line() -> u32 {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub op: CheckKind,
    /// Statement body, or a whole `theorem` declaration.
    pub statement: String,
    /// Proof text for `proof` entries; absent matches any proof.
    #[serde(default)]
    pub proof: Option<String>,
    pub verdict: Verdict,
    #[serde(default)]
    pub diagnostics: Vec<FixtureDiagnostic>,
    #[serde(default)]
    pub closing_term: Option<String>,
    #[serde(default)]
    pub fault: Option<FixtureFault>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFixtures {
    #[serde(default)]
    pub defaults: Defaults,
    /// Error messages reported when the seed is opened.
    #[serde(default)]
    pub seed_errors: Vec<String>,
    #[serde(default)]
    pub entries: Vec<FixtureEntry>,
}

impl ScriptedFixtures {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn proof_hash(proof: &str) -> String {
    hex::encode(Sha256::digest(proof.trim().as_bytes()))
}

fn statement_key(statement: &str) -> String {
    let text = statement.trim();
    if text.starts_with("theorem") {
        let decl = if text.ends_with("sorry") {
            text.to_string()
        } else {
            format!(
                "{} := sorry",
                text.split(":=").next().unwrap_or(text).trim()
            )
        };
        if let Some(stmt) = parse_theorem_declarations(&decl).statements.first() {
            return normalize_statement(stmt);
        }
    }
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

type Key = (CheckKind, String, Option<String>);

#[derive(Debug)]
pub struct ScriptedVerifier {
    defaults: Defaults,
    seed_errors: Vec<String>,
    entries: HashMap<Key, usize>,
    fixtures: Vec<FixtureEntry>,
    spent_faults: HashSet<usize>,
    seed_names: HashSet<String>,
    misses: usize,
}

impl ScriptedVerifier {
    pub fn new(fixtures: ScriptedFixtures) -> Self {
        let mut entries = HashMap::new();
        for (i, e) in fixtures.entries.iter().enumerate() {
            let key = (
                e.op,
                statement_key(&e.statement),
                e.proof.as_deref().map(proof_hash),
            );
            entries.insert(key, i);
        }
        Self {
            defaults: fixtures.defaults,
            seed_errors: fixtures.seed_errors,
            entries,
            fixtures: fixtures.entries,
            spent_faults: HashSet::new(),
            seed_names: HashSet::new(),
            misses: 0,
        }
    }

    /// Lookups that matched no fixture entry.
    pub fn fixture_misses(&self) -> usize {
        self.misses
    }

    fn lookup(
        &self,
        kind: CheckKind,
        stmt: &TheoremStatement,
        proof: Option<&str>,
    ) -> Option<usize> {
        let body = normalize_statement(stmt);
        if let Some(p) = proof {
            if let Some(&i) = self.entries.get(&(kind, body.clone(), Some(proof_hash(p)))) {
                return Some(i);
            }
        }
        self.entries.get(&(kind, body, None)).copied()
    }

    fn synthesize(
        verdict: Verdict,
        diagnostics: Vec<Diagnostic>,
        closing_term: Option<&str>,
    ) -> RawCheck {
        match verdict {
            Verdict::Valid => RawCheck {
                diagnostics: vec![Diagnostic::warning("declaration uses 'sorry'")],
                sorries: 1,
            },
            Verdict::Known => RawCheck {
                diagnostics: vec![Diagnostic::info(format!(
                    "Try this: {}",
                    closing_term.unwrap_or("exact rfl")
                ))],
                sorries: 0,
            },
            Verdict::Novel => RawCheck {
                diagnostics: vec![Diagnostic::error(
                    "`exact?` could not close the goal. Try `apply?` to see partial suggestions.",
                )],
                sorries: 0,
            },
            Verdict::Verified => RawCheck::default(),
            Verdict::Invalid | Verdict::Failed => RawCheck {
                diagnostics: if diagnostics.is_empty() {
                    vec![Diagnostic::error(
                        format!("scripted verdict: {verdict:?}").to_lowercase(),
                    )]
                } else {
                    diagnostics
                },
                sorries: 0,
            },
        }
    }
}

impl VerifierBackend for ScriptedVerifier {
    fn name(&self) -> &str {
        "scripted"
    }

    fn open(&mut self, seed: &str) -> Result<Vec<Diagnostic>, BackendError> {
        self.seed_names = declared_names(seed);
        Ok(self.seed_errors.iter().map(Diagnostic::error).collect())
    }

    fn check(
        &mut self,
        request: &CheckRequest<'_>,
        timeout: Duration,
    ) -> Result<RawCheck, BackendError> {
        let stmt = request.statement;
        let proof = request.proof.map(|p| p.text());

        if let Some(i) = self.lookup(request.kind, stmt, proof) {
            let entry = &self.fixtures[i];
            match entry.fault {
                Some(FixtureFault::Timeout) => return Err(BackendError::Timeout(timeout)),
                Some(FixtureFault::Transport) => {
                    return Err(BackendError::Transport("scripted transport fault".into()))
                }
                Some(FixtureFault::TransportOnce) if self.spent_faults.insert(i) => {
                    return Err(BackendError::Transport("scripted transport fault".into()))
                }
                _ => {}
            }
            let diagnostics = entry
                .diagnostics
                .iter()
                .map(|d| Diagnostic {
                    severity: d.severity,
                    position: Position {
                        line: d.line,
                        column: d.column,
                    },
                    message: d.message.clone(),
                })
                .collect();
            return Ok(Self::synthesize(
                entry.verdict,
                diagnostics,
                entry.closing_term.as_deref(),
            ));
        }

        match request.kind {
            CheckKind::Validity => {
                let mut names = declared_names(request.context);
                names.extend(self.seed_names.iter().cloned());
                if names.contains(stmt.name()) {
                    let diag =
                        Diagnostic::error(format!("'{}' has already been declared", stmt.name()));
                    return Ok(Self::synthesize(Verdict::Invalid, vec![diag], None));
                }
            }
            CheckKind::Novelty => {
                let key = normalize_statement(stmt);
                if let Some(existing) = scan_theorem_statements(request.context)
                    .into_iter()
                    .find(|s| normalize_statement(s) == key)
                {
                    let term = format!("exact {}", existing.name());
                    return Ok(Self::synthesize(Verdict::Known, Vec::new(), Some(&term)));
                }
            }
            CheckKind::Proof => {}
        }

        self.misses += 1;
        tracing::debug!(kind = ?request.kind, theorem = stmt.name(), "scripted verifier fixture miss; using default");
        let verdict = match request.kind {
            CheckKind::Validity => self.defaults.validity,
            CheckKind::Novelty => self.defaults.novelty,
            CheckKind::Proof => self.defaults.proof,
        };
        Ok(Self::synthesize(verdict, Vec::new(), None))
    }
}
