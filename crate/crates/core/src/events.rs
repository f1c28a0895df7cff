//! Append-only run event log and the clock that timestamps it.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Duration as ChronoDuration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PhaseStart,
    ConjectureAccepted,
    ConjectureRejected,
    ProofAttempt,
    ProofOutcome,
    TheoremAdded,
    LoopComplete,
    RunComplete,
    Resumed,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub sequence: u64,
    pub timestamp: DateTime<Utc>,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    System,
    /// One second per reading from a fixed origin, for reproducible output.
    Logical,
}

#[derive(Debug, Clone)]
pub struct Clock {
    mode: ClockMode,
    ticks: u64,
}

impl Clock {
    pub fn new(mode: ClockMode) -> Self {
        Self { mode, ticks: 0 }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    /// Readings taken so far.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn set_ticks(&mut self, ticks: u64) {
        self.ticks = ticks;
    }

    pub fn now(&mut self) -> DateTime<Utc> {
        let tick = self.ticks;
        self.ticks += 1;
        match self.mode {
            ClockMode::System => Utc::now(),
            ClockMode::Logical => {
                let origin = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
                origin + ChronoDuration::seconds(tick as i64)
            }
        }
    }
}

/// Where engines report what they did.
pub trait EventSink {
    fn emit(&mut self, kind: EventKind, payload: Value) -> io::Result<()>;
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _kind: EventKind, _payload: Value) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps events in memory; used by tests and by eval campaigns that log
/// into their own report.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<(EventKind, Value)>,
}

impl MemorySink {
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Value> {
        self.events
            .iter()
            .filter(move |(k, _)| *k == kind)
            .map(|(_, v)| v)
    }
}

impl EventSink for MemorySink {
    fn emit(&mut self, kind: EventKind, payload: Value) -> io::Result<()> {
        self.events.push((kind, payload));
        Ok(())
    }
}

/// JSON-lines event file, flushed after every event.
#[derive(Debug)]
pub struct EventLog {
    file: File,
    next_sequence: u64,
    clock: Clock,
}

impl EventLog {
    pub fn create(path: &Path, clock: Clock) -> io::Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(Self {
            file,
            next_sequence: 0,
            clock,
        })
    }

    /// Continue an existing log; sequence numbers carry on from `next_sequence`.
    pub fn append_to(path: &Path, next_sequence: u64, clock: Clock) -> io::Result<Self> {
        let text = std::fs::read(path)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        // Close off a line left half-written by a crash.
        if text.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n")?;
        }
        Ok(Self {
            file,
            next_sequence,
            clock,
        })
    }

    /// Append to `path`, creating it if needed.
    pub fn open_or_create(path: &Path, clock: Clock) -> io::Result<Self> {
        if !path.exists() {
            return Self::create(path, clock);
        }
        let next = read_events(path)?.last().map_or(0, |e| e.sequence + 1);
        Self::append_to(path, next, clock)
    }

    pub fn clock(&mut self) -> &mut Clock {
        &mut self.clock
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }
}

impl EventSink for EventLog {
    fn emit(&mut self, kind: EventKind, payload: Value) -> io::Result<()> {
        let event = RunEvent {
            sequence: self.next_sequence,
            timestamp: self.clock.now(),
            kind,
            payload,
        };
        writeln!(self.file, "{}", serde_json::to_string(&event)?)?;
        self.file.flush()?;
        self.next_sequence += 1;
        Ok(())
    }
}

/// Read an event log. Lines cut short by a crash (the last line, or one that
/// does not end its JSON object) are skipped; any other malformed line is an
/// error.
pub fn read_events(path: &Path) -> io::Result<Vec<RunEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<io::Result<_>>()?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunEvent>(line) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == lines.len() || !line.trim_end().ends_with('}') => {
                tracing::warn!("ignoring truncated line {} of {}", i + 1, path.display());
            }
            Err(e) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                ))
            }
        }
    }
    Ok(events)
}

/// Event log text with every timestamp replaced, for comparing runs.
pub fn normalize_timestamps(log: &str) -> String {
    log.lines()
        .map(|line| match serde_json::from_str::<Value>(line) {
            Ok(mut v) => {
                if let Some(ts) = v.get_mut("timestamp") {
                    *ts = Value::String("<ts>".into());
                }
                v.to_string()
            }
            Err(_) => line.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn logical_clock_is_reproducible() {
        let mut a = Clock::new(ClockMode::Logical);
        let mut b = Clock::new(ClockMode::Logical);
        assert_eq!(a.now(), b.now());
        assert_eq!(a.now().to_rfc3339(), "2000-01-01T00:00:01+00:00");
        b.set_ticks(2);
        assert_eq!(a.now(), b.now());
    }

    #[test]
    fn log_round_trip_and_sequence_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path, Clock::new(ClockMode::Logical)).unwrap();
        log.emit(EventKind::PhaseStart, json!({"loop": 0})).unwrap();
        log.emit(EventKind::Warning, json!({"message": "x"}))
            .unwrap();
        drop(log);
        let mut log = EventLog::append_to(&path, 2, Clock::new(ClockMode::Logical)).unwrap();
        log.emit(EventKind::RunComplete, json!({})).unwrap();

        let events = read_events(&path).unwrap();
        let seqs: Vec<u64> = events.iter().map(|e| e.sequence).collect();
        assert_eq!(seqs, [0, 1, 2]);
        assert_eq!(events[1].kind, EventKind::Warning);
    }

    #[test]
    fn truncated_last_line_is_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path, Clock::new(ClockMode::Logical)).unwrap();
        log.emit(EventKind::PhaseStart, json!({})).unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"sequence\": 1, \"time").unwrap();
        assert_eq!(read_events(&path).unwrap().len(), 1);
        let mut log = EventLog::append_to(&path, 1, Clock::new(ClockMode::Logical)).unwrap();
        log.emit(EventKind::Warning, json!({})).unwrap();
        assert_eq!(read_events(&path).unwrap().len(), 2);
    }

    #[test]
    fn timestamps_normalize() {
        let a =
            r#"{"sequence":0,"timestamp":"2024-01-01T00:00:00Z","kind":"warning","payload":{}}"#;
        let b =
            r#"{"sequence":0,"timestamp":"2025-06-01T10:00:00Z","kind":"warning","payload":{}}"#;
        assert_eq!(normalize_timestamps(a), normalize_timestamps(b));
    }
}
