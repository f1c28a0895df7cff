//! Rebuilding run state from the event log, and checking it against the
//! library file before a run continues.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::events::{EventKind, RunEvent};
use crate::gateway::Role;
use crate::model::{Library, LibraryEntry};

/// State saved with every `loop_complete` event.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub library_len: usize,
    pub calls: BTreeMap<Role, usize>,
    pub clock_ticks: u64,
}

/// Where an interrupted run picks up.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumePoint {
    /// First loop that has not completed.
    pub next_loop: usize,
    pub checkpoint: Checkpoint,
    pub next_sequence: u64,
    /// Library as of the checkpoint.
    pub library: Library,
    /// Entries appended after the checkpoint that will be redone.
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogState {
    Complete,
    Resumable(ResumePoint),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("event {sequence}: {message}")]
    BadEvent { sequence: u64, message: String },
    #[error("event sequence numbers are not increasing at event {0}")]
    Sequence(u64),
    #[error("library.lean entry {index} (`{name}`) does not match theorem_added event {sequence}")]
    EntryMismatch {
        index: usize,
        name: String,
        sequence: u64,
    },
    #[error("library.lean is missing entry {index} recorded by theorem_added event {sequence}")]
    MissingEntry { index: usize, sequence: u64 },
    #[error("library.lean has {extra} entries with no theorem_added event, starting with entry {index} (`{name}`)")]
    UnloggedEntries {
        index: usize,
        name: String,
        extra: usize,
    },
    #[error("library.lean seed differs from the seed file")]
    SeedMismatch,
}

fn bad(event: &RunEvent, message: impl Into<String>) -> ConsistencyError {
    ConsistencyError::BadEvent {
        sequence: event.sequence,
        message: message.into(),
    }
}

fn entry_of(event: &RunEvent) -> Result<LibraryEntry, ConsistencyError> {
    let value = event
        .payload
        .get("entry")
        .cloned()
        .ok_or_else(|| bad(event, "theorem_added without entry"))?;
    serde_json::from_value(value).map_err(|e| bad(event, format!("unreadable entry: {e}")))
}

/// The library the event log describes, with the sequence number of the
/// event that added each entry. Entries added after a checkpoint and then
/// discarded by a `resumed` event are dropped.
pub fn replay_library(
    seed: &str,
    events: &[RunEvent],
) -> Result<(Library, Vec<u64>), ConsistencyError> {
    let mut library = Library::new(seed);
    let mut added_by = Vec::new();
    let mut last_seq = None;
    for event in events {
        if last_seq.is_some_and(|s| event.sequence <= s) {
            return Err(ConsistencyError::Sequence(event.sequence));
        }
        last_seq = Some(event.sequence);
        match event.kind {
            EventKind::TheoremAdded => {
                let entry = entry_of(event)?;
                library
                    .push_entry(entry)
                    .map_err(|e| bad(event, e.to_string()))?;
                added_by.push(event.sequence);
            }
            EventKind::Resumed => {
                let len = payload_usize(event, "library_len")?;
                if len > library.len() {
                    return Err(bad(event, "resumed beyond the logged library"));
                }
                library.truncate(len);
                added_by.truncate(len);
            }
            _ => {}
        }
    }
    Ok((library, added_by))
}

fn payload_usize(event: &RunEvent, key: &str) -> Result<usize, ConsistencyError> {
    event
        .payload
        .get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| bad(event, format!("missing `{key}`")))
}

/// Compare the library file against the log. One trailing unlogged entry is
/// allowed: the file is written before its event, so a crash in between
/// leaves exactly that.
pub fn check_library(
    file: &Library,
    logged: &Library,
    added_by: &[u64],
) -> Result<(), ConsistencyError> {
    if file.seed_source().trim_end() != logged.seed_source().trim_end() {
        return Err(ConsistencyError::SeedMismatch);
    }
    for (i, expected) in logged.entries().iter().enumerate() {
        let Some(found) = file.entries().get(i) else {
            return Err(ConsistencyError::MissingEntry {
                index: i,
                sequence: added_by[i],
            });
        };
        if found.declaration().trim_end() != expected.declaration().trim_end()
            || found.provenance != expected.provenance
            || found.created_at != expected.created_at
        {
            return Err(ConsistencyError::EntryMismatch {
                index: i,
                name: found.statement.name().to_string(),
                sequence: added_by[i],
            });
        }
    }
    let extra = file.len().saturating_sub(logged.len());
    if extra > 1 {
        let first = &file.entries()[logged.len()];
        return Err(ConsistencyError::UnloggedEntries {
            index: logged.len(),
            name: first.statement.name().to_string(),
            extra,
        });
    }
    Ok(())
}

/// Decide how to continue a run from its log and library file.
pub fn inspect(
    seed: &str,
    events: &[RunEvent],
    file: &Library,
) -> Result<LogState, ConsistencyError> {
    let (logged, added_by) = replay_library(seed, events)?;
    check_library(file, &logged, &added_by)?;
    if events.iter().any(|e| e.kind == EventKind::RunComplete) {
        return Ok(LogState::Complete);
    }

    let mut next_loop = 0;
    let mut checkpoint = Checkpoint::default();
    for event in events.iter().filter(|e| e.kind == EventKind::LoopComplete) {
        let loop_index = payload_usize(event, "loop")?;
        let cp = event
            .payload
            .get("checkpoint")
            .cloned()
            .ok_or_else(|| bad(event, "loop_complete without checkpoint"))?;
        checkpoint = serde_json::from_value(cp)
            .map_err(|e| bad(event, format!("unreadable checkpoint: {e}")))?;
        next_loop = loop_index + 1;
    }
    // A `resumed` event may already have rolled back past this point.
    if checkpoint.library_len > logged.len() {
        return Err(ConsistencyError::MissingEntry {
            index: logged.len(),
            sequence: events.last().map_or(0, |e| e.sequence),
        });
    }
    let discarded = file.len() - checkpoint.library_len;
    Ok(LogState::Resumable(ResumePoint {
        next_loop,
        next_sequence: events.last().map_or(0, |e| e.sequence + 1),
        library: logged.prefix(checkpoint.library_len),
        discarded,
        checkpoint,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProofScript, Provenance, TheoremStatement};
    use serde_json::json;

    fn entry(i: usize, name: &str) -> LibraryEntry {
        LibraryEntry {
            statement: TheoremStatement::from_signature(name, &format!(": {i} = {i}")).unwrap(),
            proof: ProofScript::new("rfl").unwrap(),
            sequence_index: i,
            provenance: Provenance::Cpl,
            created_at: "2000-01-01T00:00:00Z".parse().unwrap(),
        }
    }

    fn event(sequence: u64, kind: EventKind, payload: Value) -> RunEvent {
        RunEvent {
            sequence,
            timestamp: "2000-01-01T00:00:00Z".parse().unwrap(),
            kind,
            payload,
        }
    }

    fn added(sequence: u64, e: &LibraryEntry) -> RunEvent {
        event(
            sequence,
            EventKind::TheoremAdded,
            json!({"loop": 0, "entry": e}),
        )
    }

    fn library(entries: &[LibraryEntry]) -> Library {
        let mut lib = Library::new("seed\n");
        for e in entries {
            lib.push_entry(e.clone()).unwrap();
        }
        lib
    }

    fn loop_complete(sequence: u64, loop_index: usize, library_len: usize) -> RunEvent {
        event(
            sequence,
            EventKind::LoopComplete,
            json!({"loop": loop_index, "checkpoint": {"library_len": library_len, "calls": {"prover": 3}, "clock_ticks": 9}}),
        )
    }

    #[test]
    fn resume_point_rolls_back_to_checkpoint() {
        let (a, b) = (entry(0, "a"), entry(1, "b"));
        let events = vec![added(0, &a), loop_complete(1, 0, 1), added(2, &b)];
        let state = inspect("seed\n", &events, &library(&[a.clone(), b])).unwrap();
        let LogState::Resumable(p) = state else {
            panic!()
        };
        assert_eq!(p.next_loop, 1);
        assert_eq!(p.library.len(), 1);
        assert_eq!(p.discarded, 1);
        assert_eq!(p.next_sequence, 3);
        assert_eq!(p.checkpoint.calls[&Role::Prover], 3);
    }

    #[test]
    fn complete_run_is_detected() {
        let a = entry(0, "a");
        let events = vec![
            added(0, &a),
            loop_complete(1, 0, 1),
            event(2, EventKind::RunComplete, json!({})),
        ];
        assert_eq!(
            inspect("seed\n", &events, &library(&[a])).unwrap(),
            LogState::Complete
        );
    }

    #[test]
    fn tampered_entry_is_named() {
        let a = entry(0, "a");
        let mut tampered = entry(0, "a");
        tampered.proof = ProofScript::new("by simp").unwrap();
        let err = inspect("seed\n", &[added(0, &a)], &library(&[tampered])).unwrap_err();
        assert_eq!(
            err.to_string(),
            "library.lean entry 0 (`a`) does not match theorem_added event 0"
        );
    }

    #[test]
    fn one_unlogged_trailing_entry_is_tolerated() {
        let (a, b, c) = (entry(0, "a"), entry(1, "b"), entry(2, "c"));
        let events = vec![added(0, &a)];
        assert!(inspect("seed\n", &events, &library(&[a.clone(), b.clone()])).is_ok());
        let err = inspect("seed\n", &events, &library(&[a, b, c])).unwrap_err();
        assert!(matches!(
            err,
            ConsistencyError::UnloggedEntries {
                index: 1,
                extra: 2,
                ..
            }
        ));
    }

    #[test]
    fn missing_entry_is_reported() {
        let (a, b) = (entry(0, "a"), entry(1, "b"));
        let err = inspect("seed\n", &[added(0, &a), added(1, &b)], &library(&[a])).unwrap_err();
        assert_eq!(
            err,
            ConsistencyError::MissingEntry {
                index: 1,
                sequence: 1
            }
        );
    }

    #[test]
    fn resumed_event_discards_rolled_back_entries() {
        let (a, b, b2) = (entry(0, "a"), entry(1, "b"), entry(1, "b2"));
        let events = vec![
            added(0, &a),
            loop_complete(1, 0, 1),
            added(2, &b),
            event(3, EventKind::Resumed, json!({"library_len": 1})),
            added(4, &b2),
        ];
        let (lib, by) = replay_library("seed\n", &events).unwrap();
        assert_eq!(lib.entries()[1].statement.name(), "b2");
        assert_eq!(by, [0, 4]);
    }
}
