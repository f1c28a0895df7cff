//! Reports recomputed from a directory's logs: run totals, proof-length
//! histogram, reprove rates and the natural-language breakdown.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::nl::{nl_report, NlCategory, NlReport};
use super::{
    histogram_csv, histogram_table, proof_length_histogram, Breakdown, Ratio, ReproveMode,
    ReproveReport,
};
use crate::events::{read_events, EventKind, RunEvent};
use crate::model::{parse_library_file, LengthMetric};
use crate::orchestrator::resume::replay_library;
use crate::orchestrator::write_atomic;
use crate::prover::ProofStatus;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("required log {0} is missing")]
    MissingLog(PathBuf),
    #[error("{path}: {message}")]
    Unreadable { path: PathBuf, message: String },
}

fn unreadable(path: &Path, e: impl ToString) -> ReportError {
    ReportError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConjectureTotals {
    pub raw_candidates: usize,
    pub rejected_parse: usize,
    pub rejected_duplicate: usize,
    pub rejected_invalid: usize,
    pub rejected_known: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub bin_width: usize,
    pub metric: LengthMetric,
    pub bins: Vec<(usize, usize)>,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub campaign: String,
    pub mode: ReproveMode,
    pub total: usize,
    pub breakdown: Breakdown,
    pub success_rate: Ratio,
    pub success_percent: Option<usize>,
    pub flagged: Vec<usize>,
    /// Whether the statuses logged as events agree with the report file.
    pub matches_event_log: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub loops_completed: usize,
    pub run_complete: bool,
    pub library_len: usize,
    pub theorems_per_loop: BTreeMap<usize, usize>,
    pub conjectures: ConjectureTotals,
    pub proofs: Breakdown,
    /// Prover attempts in the run itself (not in evaluation campaigns).
    pub prover_attempts: usize,
    pub simple_loop_attempts: usize,
    /// Completed model calls per role, from the transcript.
    pub transcript_calls: BTreeMap<String, usize>,
    pub histogram: HistogramReport,
    pub campaigns: Vec<CampaignSummary>,
    pub nl: Option<NlReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub bin_width: usize,
    pub metric: LengthMetric,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            bin_width: 10,
            metric: LengthMetric::Lines,
        }
    }
}

/// Per-loop tallies that only count once their loop completes; a resume
/// discards the tallies of the loop it redoes.
#[derive(Default)]
struct LoopTally {
    proofs: Breakdown,
    prover_attempts: usize,
    simple_attempts: usize,
}

fn run_totals(events: &[RunEvent], report: &mut RunReport) {
    let mut pending = LoopTally::default();
    let mut committed = LoopTally::default();
    for e in events {
        let p = &e.payload;
        let in_campaign = p.get("campaign").is_some();
        match e.kind {
            EventKind::ProofAttempt if !in_campaign => {
                if p.get("declaration").is_some() {
                    pending.simple_attempts += 1;
                } else {
                    pending.prover_attempts += 1;
                }
            }
            EventKind::ProofOutcome if !in_campaign => {
                if let Some(status) = p
                    .get("status")
                    .cloned()
                    .and_then(|s| serde_json::from_value::<ProofStatus>(s).ok())
                {
                    pending.proofs.add(status);
                }
            }
            EventKind::Resumed => pending = LoopTally::default(),
            EventKind::LoopComplete => {
                report.loops_completed += 1;
                if let Some(c) = p.get("conjecture_phase") {
                    let get = |k: &str| c.get(k).and_then(Value::as_u64).unwrap_or(0) as usize;
                    let t = &mut report.conjectures;
                    t.raw_candidates += get("raw_candidates");
                    t.rejected_parse += get("rejected_parse");
                    t.rejected_duplicate += get("rejected_duplicate");
                    t.rejected_invalid += get("rejected_invalid");
                    t.rejected_known += get("rejected_known");
                    t.accepted += get("accepted");
                }
                let done = std::mem::take(&mut pending);
                committed.proofs.verified += done.proofs.verified;
                committed.proofs.failed_exhausted += done.proofs.failed_exhausted;
                committed.proofs.declared_unprovable += done.proofs.declared_unprovable;
                committed.prover_attempts += done.prover_attempts;
                committed.simple_attempts += done.simple_attempts;
            }
            EventKind::RunComplete => report.run_complete = true,
            _ => {}
        }
    }
    report.proofs = committed.proofs;
    report.prover_attempts = committed.prover_attempts;
    report.simple_loop_attempts = committed.simple_attempts;
}

fn transcript_calls(path: &Path) -> Result<BTreeMap<String, usize>, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| unreadable(path, e))?;
    let mut calls = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| unreadable(path, e))?;
        if v.get("response").is_some() {
            let role = v
                .get("role")
                .and_then(Value::as_str)
                .unwrap_or("unknown")
                .to_string();
            *calls.entry(role).or_insert(0) += 1;
        }
    }
    Ok(calls)
}

fn campaign_statuses(events: &[RunEvent], campaign: &str) -> Vec<(usize, ProofStatus)> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::ProofOutcome)
        .filter(|e| e.payload.get("campaign").and_then(Value::as_str) == Some(campaign))
        .filter_map(|e| {
            let index = e.payload.get("index")?.as_u64()? as usize;
            let status = serde_json::from_value(e.payload.get("status")?.clone()).ok()?;
            Some((index, status))
        })
        .collect()
}

/// Reprove report files found in `dir`.
pub fn campaign_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            (name.starts_with("reprove_") || name.starts_with("focused_"))
                && name.ends_with(".json")
        })
        .collect();
    files.sort();
    files
}

fn summarize(report: &ReproveReport, events: &[RunEvent]) -> CampaignSummary {
    let logged = campaign_statuses(events, &report.campaign);
    let expected: Vec<(usize, ProofStatus)> = report
        .per_theorem
        .iter()
        .map(|r| (r.index, r.status))
        .collect();
    CampaignSummary {
        campaign: report.campaign.clone(),
        mode: report.mode,
        total: report.total,
        breakdown: report.breakdown.clone(),
        success_rate: report.success_rate,
        success_percent: report.success_rate.percent(),
        flagged: report.flagged.clone(),
        matches_event_log: logged == expected,
    }
}

/// Recompute everything from the logs in `dir` and write `report.json`,
/// `report.txt` and `histogram.csv`.
pub fn emit_reports(dir: &Path, options: ReportOptions) -> Result<RunReport, ReportError> {
    let events_path = dir.join("events.jsonl");
    let transcript_path = dir.join("transcript.jsonl");
    for p in [&events_path, &transcript_path] {
        if !p.exists() {
            return Err(ReportError::MissingLog(p.clone()));
        }
    }
    let events = read_events(&events_path).map_err(|e| unreadable(&events_path, e))?;

    let mut report = RunReport::default();
    run_totals(&events, &mut report);
    report.transcript_calls = transcript_calls(&transcript_path)?;

    let library_path = dir.join("library.lean");
    let seed = match fs::read_to_string(&library_path) {
        Ok(text) => parse_library_file(&text)
            .map_err(|e| unreadable(&library_path, e))?
            .seed_source()
            .to_string(),
        Err(_) => String::new(),
    };
    let (library, _) = replay_library(&seed, &events).map_err(|e| unreadable(&events_path, e))?;
    report.library_len = library.len();
    // Entries rolled back by a resume are not counted.
    let mut by_loop = BTreeMap::new();
    let mut live = 0usize;
    for e in &events {
        match e.kind {
            EventKind::TheoremAdded => {
                live += 1;
                if let Some(l) = e.payload.get("loop").and_then(Value::as_u64) {
                    by_loop
                        .entry(l as usize)
                        .or_insert_with(Vec::new)
                        .push(live - 1);
                }
            }
            EventKind::Resumed => {
                let keep = e
                    .payload
                    .get("library_len")
                    .and_then(Value::as_u64)
                    .unwrap_or(0) as usize;
                for v in by_loop.values_mut() {
                    v.retain(|&i| i < keep);
                }
                live = keep;
            }
            _ => {}
        }
    }
    report.theorems_per_loop = by_loop
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k, v.len()))
        .collect();

    let bins = proof_length_histogram(&library, options.bin_width, options.metric);
    report.histogram = HistogramReport {
        bin_width: options.bin_width.max(1),
        metric: options.metric,
        bins,
        entries: library.len(),
    };

    for path in campaign_files(dir) {
        let text = fs::read_to_string(&path).map_err(|e| unreadable(&path, e))?;
        let r: ReproveReport = serde_json::from_str(&text).map_err(|e| unreadable(&path, e))?;
        report.campaigns.push(summarize(&r, &events));
    }
    if dir.join("nl_responses").join("manifest.json").exists() {
        report.nl = Some(nl_report(dir, false).map_err(|e| unreadable(dir, e))?);
    }

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let report_path = dir.join("report.json");
    write_atomic(&report_path, &json).map_err(|e| unreadable(&report_path, e))?;
    let csv_path = dir.join("histogram.csv");
    write_atomic(
        &csv_path,
        &histogram_csv(&report.histogram.bins, report.histogram.bin_width),
    )
    .map_err(|e| unreadable(&csv_path, e))?;
    let txt_path = dir.join("report.txt");
    write_atomic(&txt_path, &render_text(&report)).map_err(|e| unreadable(&txt_path, e))?;
    Ok(report)
}

pub fn write_run_report(dir: &Path) -> Result<RunReport, ReportError> {
    emit_reports(dir, ReportOptions::default())
}

fn rate_cell(r: &Ratio) -> String {
    r.to_string()
}

/// Plain-text tables for everything in the report.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("run\n");
    out.push_str(&format!(
        "  loops completed      {}\n",
        report.loops_completed
    ));
    out.push_str(&format!("  run complete         {}\n", report.run_complete));
    out.push_str(&format!("  library entries      {}\n", report.library_len));
    let c = &report.conjectures;
    out.push_str(&format!(
        "  conjectures          raw {} / parse {} / duplicate {} / invalid {} / known {} / accepted {}\n",
        c.raw_candidates, c.rejected_parse, c.rejected_duplicate, c.rejected_invalid, c.rejected_known, c.accepted
    ));
    let p = &report.proofs;
    out.push_str(&format!(
        "  proofs               verified {} / failed {} / declared unprovable {}\n",
        p.verified, p.failed_exhausted, p.declared_unprovable
    ));
    out.push_str(&format!(
        "  prover attempts      {}\n",
        report.prover_attempts
    ));
    if report.simple_loop_attempts > 0 {
        out.push_str(&format!(
            "  simple-loop attempts {}\n",
            report.simple_loop_attempts
        ));
    }

    let h = &report.histogram;
    out.push_str(&format!(
        "\nproof length histogram ({}, bin width {})\n",
        h.metric.label(),
        h.bin_width
    ));
    if h.bins.is_empty() {
        out.push_str("  (empty library)\n");
    } else {
        for line in histogram_table(&h.bins, h.bin_width).lines() {
            out.push_str(&format!("  {line}\n"));
        }
    }

    if !report.campaigns.is_empty() {
        out.push_str("\nreprove campaigns\n");
        out.push_str(&format!(
            "  {:<28} {:>9} {:>7} {:>9}  {}\n",
            "campaign", "verified", "failed", "declared", "success rate"
        ));
        for s in &report.campaigns {
            out.push_str(&format!(
                "  {:<28} {:>9} {:>7} {:>9}  {}{}\n",
                s.campaign,
                s.breakdown.verified,
                s.breakdown.failed_exhausted,
                s.breakdown.declared_unprovable,
                rate_cell(&s.success_rate),
                if s.matches_event_log {
                    ""
                } else {
                    "  [differs from event log]"
                }
            ));
        }
        for prefix in ["reprove", "focused"] {
            let find = |mode: ReproveMode| {
                report
                    .campaigns
                    .iter()
                    .find(|s| s.campaign == format!("{prefix}_{}", mode.as_str()))
            };
            if let (Some(w), Some(d)) = (
                find(ReproveMode::WithContext),
                find(ReproveMode::DefinitionsOnly),
            ) {
                out.push_str(&format!(
                    "\n  {prefix}: with context {}  |  definitions only {}\n",
                    rate_cell(&w.success_rate),
                    rate_cell(&d.success_rate)
                ));
            }
        }
    }

    if let Some(nl) = &report.nl {
        out.push_str("\nnatural-language session\n");
        for c in NlCategory::ALL {
            out.push_str(&format!(
                "  {:<20} {}\n",
                c.as_str(),
                rate_cell(&nl.rates[&c])
            ));
        }
        if !nl.pending.is_empty() {
            out.push_str(&format!(
                "  pending              {}\n",
                nl.pending.join(", ")
            ));
        }
        if !nl.failed_fetch.is_empty() {
            out.push_str(&format!(
                "  failed fetch         {}\n",
                nl.failed_fetch.join(", ")
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_logs_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_run_report(dir.path()).unwrap_err();
        assert!(err.to_string().contains("events.jsonl"));
        fs::write(dir.path().join("events.jsonl"), "").unwrap();
        let err = write_run_report(dir.path()).unwrap_err();
        assert!(err.to_string().contains("transcript.jsonl"));
    }

    #[test]
    fn empty_logs_give_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("events.jsonl"), "").unwrap();
        fs::write(dir.path().join("transcript.jsonl"), "").unwrap();
        let r = write_run_report(dir.path()).unwrap();
        assert_eq!(r.library_len, 0);
        assert!(r.histogram.bins.is_empty());
        assert!(dir.path().join("report.json").exists());
        assert!(fs::read_to_string(dir.path().join("report.txt"))
            .unwrap()
            .contains("(empty library)"));
        assert_eq!(
            fs::read_to_string(dir.path().join("histogram.csv")).unwrap(),
            "bin_start,bin_end,count\n"
        );
    }
}
