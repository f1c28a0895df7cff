//! Evaluation campaigns over a finished library: re-proving with and
//! without context, a focused repeated campaign, the natural-language
//! comparison session, proof-length histograms and reports.

pub mod nl;
pub mod report;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use report::{emit_reports, write_run_report, ReportError, RunReport};

use crate::events::EventSink;
use crate::gateway::Gateway;
use crate::model::{proof_length, render_context, LengthMetric, Library, TheoremStatement};
use crate::prover::{prove, ProofStatus, ProverSettings};
use crate::verifier::VerifierSession;
use crate::EngineError;

/// An exact success rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        Self {
            numerator,
            denominator,
        }
    }

    /// Whole percent, halves rounded up. `None` for an empty denominator.
    pub fn percent(&self) -> Option<usize> {
        (self.denominator > 0)
            .then(|| (200 * self.numerator + self.denominator) / (2 * self.denominator))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.percent() {
            Some(p) => write!(f, "{}/{} ({p}%)", self.numerator, self.denominator),
            None => write!(f, "0/0 (n/a)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReproveMode {
    WithContext,
    DefinitionsOnly,
}

impl ReproveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReproveMode::WithContext => "with_context",
            ReproveMode::DefinitionsOnly => "definitions_only",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub verified: usize,
    pub failed_exhausted: usize,
    pub declared_unprovable: usize,
}

impl Breakdown {
    pub fn add(&mut self, status: ProofStatus) {
        match status {
            ProofStatus::Verified => self.verified += 1,
            ProofStatus::FailedExhausted => self.failed_exhausted += 1,
            ProofStatus::DeclaredUnprovable => self.declared_unprovable += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.verified + self.failed_exhausted + self.declared_unprovable
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremResult {
    /// Library sequence index, or the repetition number in a focused campaign.
    pub index: usize,
    pub name: String,
    pub status: ProofStatus,
    pub trials: usize,
    /// SHA-256 of the library part of the prompt context.
    pub context_hash: String,
    /// Library entries present in the context.
    pub context_entries: Vec<usize>,
    pub transport_failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproveReport {
    pub campaign: String,
    pub mode: ReproveMode,
    pub per_theorem: Vec<TheoremResult>,
    pub success_count: usize,
    pub total: usize,
    pub success_rate: Ratio,
    pub breakdown: Breakdown,
    /// Indices whose campaign lost trials to transport failures.
    pub flagged: Vec<usize>,
}

impl ReproveReport {
    fn from_results(campaign: &str, mode: ReproveMode, per_theorem: Vec<TheoremResult>) -> Self {
        let mut breakdown = Breakdown::default();
        for r in &per_theorem {
            breakdown.add(r.status);
        }
        let total = per_theorem.len();
        let flagged = per_theorem
            .iter()
            .filter(|r| r.transport_failures > 0)
            .map(|r| r.index)
            .collect();
        Self {
            campaign: campaign.to_string(),
            mode,
            success_count: breakdown.verified,
            total,
            success_rate: Ratio::new(breakdown.verified, total),
            breakdown,
            per_theorem,
            flagged,
        }
    }

    pub fn declared_false_rate(&self) -> Ratio {
        Ratio::new(self.breakdown.declared_unprovable, self.total)
    }

    pub fn failed_rate(&self) -> Ratio {
        Ratio::new(self.breakdown.failed_exhausted, self.total)
    }
}

fn context_fingerprint(
    context: &Library,
    stmt: &TheoremStatement,
    budget: usize,
) -> Result<(String, Vec<usize>), EngineError> {
    let rendered = render_context(context, std::slice::from_ref(stmt), budget)?;
    let hash = hex::encode(Sha256::digest(rendered.library_part().as_bytes()));
    Ok((hash, rendered.included))
}

#[allow(clippy::too_many_arguments)]
fn campaign(
    name: &str,
    index: usize,
    stmt: &TheoremStatement,
    context: &Library,
    session: &mut VerifierSession,
    gateway: &Gateway,
    settings: &ProverSettings,
    events: &mut dyn EventSink,
) -> Result<TheoremResult, EngineError> {
    let mut settings = settings.clone();
    settings.tags.insert("campaign".into(), json!(name));
    settings.tags.insert("index".into(), json!(index));
    let (context_hash, context_entries) =
        context_fingerprint(context, stmt, settings.context_budget)?;
    let outcome = prove(stmt, context, session, gateway, &settings, events)?;
    Ok(TheoremResult {
        index,
        name: stmt.name().to_string(),
        status: outcome.status,
        trials: outcome.attempts.len(),
        context_hash,
        context_entries,
        transport_failures: outcome.transport_failures,
    })
}

/// Re-prove every entry. With context, entry `i` sees entries `[0, i)`;
/// otherwise only the seed.
pub fn reprove_all(
    library: &Library,
    mode: ReproveMode,
    session: &mut VerifierSession,
    gateway: &Gateway,
    settings: &ProverSettings,
    events: &mut dyn EventSink,
) -> Result<ReproveReport, EngineError> {
    let name = format!("reprove_{}", mode.as_str());
    let mut results = Vec::with_capacity(library.len());
    for (i, entry) in library.entries().iter().enumerate() {
        let context = match mode {
            ReproveMode::WithContext => library.prefix(i),
            ReproveMode::DefinitionsOnly => library.seed_only(),
        };
        results.push(campaign(
            &name,
            i,
            &entry.statement,
            &context,
            session,
            gateway,
            settings,
            events,
        )?);
    }
    Ok(ReproveReport::from_results(&name, mode, results))
}

/// Prove one statement `n` times independently.
#[allow(clippy::too_many_arguments)]
pub fn reprove_focused(
    stmt: &TheoremStatement,
    library_prefix: &Library,
    n: u32,
    mode: ReproveMode,
    session: &mut VerifierSession,
    gateway: &Gateway,
    settings: &ProverSettings,
    events: &mut dyn EventSink,
) -> Result<ReproveReport, EngineError> {
    let name = format!("focused_{}", mode.as_str());
    let context = match mode {
        ReproveMode::WithContext => library_prefix.clone(),
        ReproveMode::DefinitionsOnly => library_prefix.seed_only(),
    };
    let mut results = Vec::with_capacity(n as usize);
    for run in 0..n as usize {
        results.push(campaign(
            &name, run, stmt, &context, session, gateway, settings, events,
        )?);
    }
    Ok(ReproveReport::from_results(&name, mode, results))
}

/// Counts of proof lengths in bins `[k·width, (k+1)·width)`, nonempty bins
/// only, in ascending order.
pub fn proof_length_histogram(
    library: &Library,
    width: usize,
    metric: LengthMetric,
) -> Vec<(usize, usize)> {
    let lengths: Vec<usize> = library
        .entries()
        .iter()
        .map(|e| proof_length(&e.proof, metric))
        .collect();
    histogram(&lengths, width)
}

pub fn histogram(values: &[usize], width: usize) -> Vec<(usize, usize)> {
    let width = width.max(1);
    let mut bins = std::collections::BTreeMap::new();
    for &v in values {
        *bins.entry(v / width * width).or_insert(0) += 1;
    }
    bins.into_iter().collect()
}

pub fn histogram_csv(bins: &[(usize, usize)], width: usize) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (start, count) in bins {
        out.push_str(&format!("{start},{},{count}\n", start + width));
    }
    out
}

pub fn histogram_table(bins: &[(usize, usize)], width: usize) -> String {
    let mut out = String::from("proof length      count\n");
    for (start, count) in bins {
        let range = format!("[{start}, {})", start + width);
        out.push_str(&format!("{range:<16}  {count:>5}\n"));
    }
    out
}
