//! Domain types for theorem statements, proofs and libraries, plus the pure
//! text operations shared by every other module.

mod context;
mod lexer;
mod library_file;
mod metrics;
mod parse;

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{render_context, RenderedContext};
pub use library_file::{parse_library_file, render_library_file, ENTRY_MARKER_PREFIX};
pub use metrics::{proof_length, LengthMetric};
pub use parse::{
    declared_names, normalize_statement, parse_full_declaration, parse_theorem_declarations,
    scan_theorem_statements, strip_code_fences, FenceStripped, ParsedDeclarations,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("proof text is empty")]
    EmptyProof,
    #[error("proof uses `sorry`")]
    SorryInProof,
    #[error("malformed theorem declaration: {0}")]
    MalformedDeclaration(String),
    #[error("context budget of {budget} characters cannot hold the seed and extras ({required} characters)")]
    ContextUnconstructible { budget: usize, required: usize },
    #[error("library file is malformed: {0}")]
    MalformedLibraryFile(String),
}

/// A conjectured theorem declaration whose proof is elided as `sorry`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremStatement {
    name: String,
    body: String,
    source_text: String,
}

impl TheoremStatement {
    /// Build a statement from a theorem name and its signature (binders and
    /// type, the text between the name and `:=`).
    pub fn from_signature(name: &str, signature: &str) -> Result<Self, ModelError> {
        let name = name.trim();
        let signature = signature.trim();
        if name.is_empty() || !name.chars().all(|c| !c.is_whitespace()) {
            return Err(ModelError::MalformedDeclaration(format!(
                "invalid theorem name {name:?}"
            )));
        }
        let body = match signature.strip_prefix(':') {
            Some(rest) => rest.trim(),
            None => signature,
        };
        if body.is_empty() {
            return Err(ModelError::MalformedDeclaration(format!(
                "theorem {name} has an empty statement"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            body: body.to_string(),
            source_text: format!("theorem {name} {signature} := sorry"),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Binders and type of the statement, without the theorem name.
    pub fn body(&self) -> &str {
        &self.body
    }

    /// Full declaration ending in `:= sorry`.
    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    /// The declaration up to and including `:=`.
    pub fn header(&self) -> &str {
        self.source_text
            .strip_suffix("sorry")
            .map(str::trim_end)
            .unwrap_or(&self.source_text)
    }

    /// Render the declaration with `proof` in place of `sorry`.
    pub fn with_proof(&self, proof: &str) -> String {
        if proof.starts_with('\n') {
            format!("{}{}", self.header(), proof)
        } else {
            format!("{} {}", self.header(), proof)
        }
    }

    /// Render the declaration with `by exact?` in place of `sorry`.
    pub fn with_exact_query(&self) -> String {
        self.with_proof("by exact?")
    }

    /// Same statement under a different theorem name.
    pub fn renamed(&self, new_name: &str) -> Self {
        let rest = self
            .source_text
            .strip_prefix("theorem")
            .map(str::trim_start)
            .and_then(|s| s.strip_prefix(self.name.as_str()))
            .unwrap_or("");
        Self {
            name: new_name.to_string(),
            body: self.body.clone(),
            source_text: format!("theorem {new_name}{rest}"),
        }
    }
}

/// Proof text that directly follows `:=` in a theorem declaration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProofScript(String);

impl ProofScript {
    /// Surrounding whitespace is trimmed.
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(ModelError::EmptyProof);
        }
        if lexer::contains_code_token(&text, "sorry") {
            return Err(ModelError::SorryInProof);
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ProofScript {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ProofScript> for String {
    fn from(value: ProofScript) -> Self {
        value.0
    }
}

impl fmt::Display for ProofScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Cpl,
    SimpleLoop,
    Fixture,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Cpl => "cpl",
            Provenance::SimpleLoop => "simple_loop",
            Provenance::Fixture => "fixture",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cpl" => Some(Provenance::Cpl),
            "simple_loop" => Some(Provenance::SimpleLoop),
            "fixture" => Some(Provenance::Fixture),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub statement: TheoremStatement,
    pub proof: ProofScript,
    pub sequence_index: usize,
    pub provenance: Provenance,
    pub created_at: DateTime<Utc>,
}

impl LibraryEntry {
    /// The complete `theorem ... := <proof>` declaration.
    pub fn declaration(&self) -> String {
        self.statement.with_proof(self.proof.text())
    }
}

/// Verified theorems accumulated on top of a user-supplied seed file.
///
/// Entries are only ever appended; callers are responsible for appending
/// only pairs the verifier accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Library {
    seed_source: String,
    entries: Vec<LibraryEntry>,
}

impl Library {
    pub fn new(seed_source: impl Into<String>) -> Self {
        Self {
            seed_source: seed_source.into(),
            entries: Vec::new(),
        }
    }

    pub fn seed_source(&self) -> &str {
        &self.seed_source
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A library holding the seed and the first `n` entries.
    pub fn prefix(&self, n: usize) -> Library {
        Library {
            seed_source: self.seed_source.clone(),
            entries: self.entries[..n.min(self.entries.len())].to_vec(),
        }
    }

    /// A library holding only the seed.
    pub fn seed_only(&self) -> Library {
        self.prefix(0)
    }

    /// Names declared so far, in the seed and in entries.
    pub fn declared_names(&self) -> HashSet<String> {
        let mut names = parse::declared_names(&self.seed_source);
        names.extend(self.entries.iter().map(|e| e.statement.name().to_string()));
        names
    }

    /// Append a verified pair. A theorem name already present is suffixed
    /// with `_<sequence_index>` so every entry stays usable as a lemma.
    pub fn append(
        &mut self,
        statement: TheoremStatement,
        proof: ProofScript,
        provenance: Provenance,
        created_at: DateTime<Utc>,
    ) -> &LibraryEntry {
        let sequence_index = self.entries.len();
        let statement = if self.declared_names().contains(statement.name()) {
            let fresh = format!("{}_{}", statement.name(), sequence_index);
            statement.renamed(&fresh)
        } else {
            statement
        };
        self.entries.push(LibraryEntry {
            statement,
            proof,
            sequence_index,
            provenance,
            created_at,
        });
        self.entries.last().expect("just pushed")
    }

    /// Push an already-numbered entry, as read back from disk or a log.
    pub(crate) fn push_entry(&mut self, entry: LibraryEntry) -> Result<(), ModelError> {
        if entry.sequence_index != self.entries.len() {
            return Err(ModelError::MalformedLibraryFile(format!(
                "entry {} found where {} was expected",
                entry.sequence_index,
                self.entries.len()
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Roll back to the first `len` entries. Only used when resuming an
    /// interrupted run from its last checkpoint.
    pub(crate) fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }
}

/// Conjectures accepted during one conjecture phase, unique by normalized body.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConjectureList {
    items: Vec<TheoremStatement>,
    #[serde(skip)]
    keys: HashSet<String>,
}

impl ConjectureList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[TheoremStatement] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains_equivalent(&self, stmt: &TheoremStatement) -> bool {
        self.keys.contains(&normalize_statement(stmt))
    }

    /// Adds `stmt` unless an item with the same normalized body exists.
    /// Returns whether it was added.
    pub fn push(&mut self, stmt: TheoremStatement) -> bool {
        if !self.keys.insert(normalize_statement(&stmt)) {
            return false;
        }
        self.items.push(stmt);
        true
    }
}
