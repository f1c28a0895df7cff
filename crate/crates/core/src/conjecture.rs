//! Conjecture phase: query the conjecturer repeatedly and keep candidates
//! that are new to the list, elaborate, and are not already derivable.

use serde::Serialize;
use serde_json::json;

use crate::events::{EventKind, EventSink};
use crate::gateway::{ChatRequest, Gateway, Role};
use crate::model::{parse_theorem_declarations, render_context, ConjectureList, Library};
use crate::verifier::{Verdict, VerifierSession};
use crate::{EngineError, RolePrompt};

pub const DEFAULT_ITERATIONS: u32 = 16;

#[derive(Debug, Clone)]
pub struct ConjectureSettings {
    pub iterations: u32,
    pub context_budget: usize,
    pub prompt: RolePrompt,
    /// Loop number recorded in events.
    pub loop_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConjecturePhaseReport {
    pub iterations_run: u32,
    pub raw_candidates: usize,
    pub rejected_parse: usize,
    pub rejected_duplicate: usize,
    pub rejected_invalid: usize,
    pub rejected_known: usize,
    pub accepted: ConjectureList,
}

impl ConjecturePhaseReport {
    pub fn counters_balance(&self) -> bool {
        self.raw_candidates
            == self.rejected_parse
                + self.rejected_duplicate
                + self.rejected_invalid
                + self.rejected_known
                + self.accepted.len()
    }

    /// Counters without the accepted statements, for event payloads.
    pub fn summary(&self) -> serde_json::Value {
        json!({
            "iterations_run": self.iterations_run,
            "raw_candidates": self.raw_candidates,
            "rejected_parse": self.rejected_parse,
            "rejected_duplicate": self.rejected_duplicate,
            "rejected_invalid": self.rejected_invalid,
            "rejected_known": self.rejected_known,
            "accepted": self.accepted.len(),
        })
    }
}

/// A phase stopped by a fatal error, with what it had accepted so far.
#[derive(Debug, thiserror::Error)]
#[error("conjecture phase aborted after {} iterations: {error}", .report.iterations_run)]
pub struct PhaseAborted {
    pub report: ConjecturePhaseReport,
    pub error: EngineError,
}

#[allow(clippy::result_large_err)]
pub fn run_conjecture_phase(
    library: &Library,
    session: &mut VerifierSession,
    gateway: &Gateway,
    settings: &ConjectureSettings,
    events: &mut dyn EventSink,
) -> Result<ConjecturePhaseReport, PhaseAborted> {
    let mut report = ConjecturePhaseReport::default();
    match phase(library, session, gateway, settings, events, &mut report) {
        Ok(()) => Ok(report),
        Err(error) => Err(PhaseAborted { report, error }),
    }
}

fn phase(
    library: &Library,
    session: &mut VerifierSession,
    gateway: &Gateway,
    settings: &ConjectureSettings,
    events: &mut dyn EventSink,
    report: &mut ConjecturePhaseReport,
) -> Result<(), EngineError> {
    let loop_index = settings.loop_index;
    for iteration in 0..settings.iterations {
        let context = render_context(library, report.accepted.items(), settings.context_budget)?;
        if let Some(w) = &context.warning {
            events.emit(
                EventKind::Warning,
                json!({"loop": loop_index, "message": w}),
            )?;
        }
        let request = ChatRequest {
            role: Role::Conjecturer,
            system_prompt: settings.prompt.system_prompt.clone(),
            user_content: context.full().to_string(),
            sampling: settings.prompt.sampling,
        };
        report.iterations_run += 1;
        let response = match gateway.complete(&request) {
            Ok(r) => r,
            Err(e) if !e.is_fatal() => {
                events.emit(
                    EventKind::Warning,
                    json!({"loop": loop_index, "iteration": iteration, "message": e.to_string()}),
                )?;
                continue;
            }
            Err(e) => return Err(e.into()),
        };

        let parsed = parse_theorem_declarations(&response.text);
        report.raw_candidates += parsed.statements.len() + parsed.skipped;
        report.rejected_parse += parsed.skipped;
        for warning in &parsed.warnings {
            let kind = if warning.starts_with("skipped declaration") {
                EventKind::ConjectureRejected
            } else {
                EventKind::Warning
            };
            let mut payload =
                json!({"loop": loop_index, "iteration": iteration, "message": warning});
            if kind == EventKind::ConjectureRejected {
                payload["reason"] = json!("parse");
            }
            events.emit(kind, payload)?;
        }

        for stmt in parsed.statements {
            let rejected = |reason: &str| {
                json!({
                    "loop": loop_index,
                    "iteration": iteration,
                    "reason": reason,
                    "name": stmt.name(),
                    "statement": stmt.source_text(),
                })
            };
            if report.accepted.contains_equivalent(&stmt) {
                report.rejected_duplicate += 1;
                events.emit(EventKind::ConjectureRejected, rejected("duplicate"))?;
                continue;
            }

            let context =
                render_context(library, report.accepted.items(), settings.context_budget)?;
            let validity = match session.check_validity(context.dynamic_part(), &stmt) {
                Ok(r) => r,
                Err(e) => {
                    report.rejected_invalid += 1;
                    let mut payload = rejected("invalid");
                    payload["cause"] = json!(e.to_string());
                    events.emit(EventKind::ConjectureRejected, payload)?;
                    continue;
                }
            };
            if validity.verdict != Verdict::Valid {
                report.rejected_invalid += 1;
                let mut payload = rejected("invalid");
                payload["diagnostics"] = json!(validity.diagnostics);
                events.emit(EventKind::ConjectureRejected, payload)?;
                continue;
            }

            let novelty = match session.check_novelty(context.dynamic_part(), &stmt) {
                Ok(r) => r,
                Err(e) => {
                    report.rejected_invalid += 1;
                    let mut payload = rejected("invalid");
                    payload["cause"] = json!(e.to_string());
                    events.emit(EventKind::ConjectureRejected, payload)?;
                    continue;
                }
            };
            if novelty.verdict == Verdict::Known {
                report.rejected_known += 1;
                let mut payload = rejected("known");
                payload["closing_term"] = json!(novelty.closing_term);
                events.emit(EventKind::ConjectureRejected, payload)?;
                continue;
            }

            let mut payload = rejected("");
            payload.as_object_mut().expect("object").remove("reason");
            payload["index"] = json!(report.accepted.len());
            payload["novelty_diagnostics"] = json!(novelty.diagnostics);
            report.accepted.push(stmt);
            events.emit(EventKind::ConjectureAccepted, payload)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::MemorySink;
    use crate::gateway::{prompts, ReplayProvider, RetryPolicy};
    use crate::verifier::{FixtureEntry, ScriptedFixtures, ScriptedVerifier, Timeouts};
    use proptest::prelude::*;
    use std::collections::HashMap;
    use std::sync::Arc;

    const SEED: &str = "import Mathlib\nnamespace Topology\n";

    fn gateway(responses: Vec<&str>) -> Gateway {
        let mut map = HashMap::new();
        map.insert(
            Role::Conjecturer,
            responses.into_iter().map(String::from).collect(),
        );
        Gateway::with_provider(
            RetryPolicy {
                max_attempts: 1,
                ..Default::default()
            },
            Arc::new(ReplayProvider::from_responses(map)),
        )
    }

    fn session(fixtures: ScriptedFixtures) -> VerifierSession {
        VerifierSession::open(
            Box::new(ScriptedVerifier::new(fixtures)),
            SEED,
            Timeouts::default(),
        )
        .unwrap()
    }

    fn settings(iterations: u32) -> ConjectureSettings {
        ConjectureSettings {
            iterations,
            context_budget: 100_000,
            prompt: RolePrompt::new(prompts::CONJECTURER),
            loop_index: 0,
        }
    }

    fn fixture(op: &str, statement: &str, verdict: Verdict) -> FixtureEntry {
        serde_json::from_value(json!({"op": op, "statement": statement, "verdict": verdict}))
            .unwrap()
    }

    #[test]
    fn two_novel_candidates_in_one_iteration() {
        let gw = gateway(vec![
            "theorem a : 1 = 1 := sorry\n\ntheorem b : 2 = 2 := sorry",
        ]);
        let mut s = session(ScriptedFixtures::default());
        let report = run_conjecture_phase(
            &Library::new(SEED),
            &mut s,
            &gw,
            &settings(1),
            &mut MemorySink::default(),
        )
        .unwrap();
        assert_eq!(report.accepted.len(), 2);
        assert_eq!(report.raw_candidates, 2);
        assert!(report.counters_balance());
        assert_eq!(
            report.rejected_duplicate + report.rejected_invalid + report.rejected_known,
            0
        );
    }

    #[test]
    fn repeated_statement_is_a_duplicate() {
        let gw = gateway(vec![
            "theorem a : 1 = 1 := sorry",
            "theorem a2 :  1   =\n  1 := sorry",
        ]);
        let mut s = session(ScriptedFixtures::default());
        let report = run_conjecture_phase(
            &Library::new(SEED),
            &mut s,
            &gw,
            &settings(2),
            &mut MemorySink::default(),
        )
        .unwrap();
        assert_eq!(report.accepted.len(), 1);
        assert_eq!(report.rejected_duplicate, 1);
    }

    #[test]
    fn all_iterations_run_even_when_empty() {
        let gw = gateway(vec![""; 16]);
        let mut s = session(ScriptedFixtures::default());
        let report = run_conjecture_phase(
            &Library::new(SEED),
            &mut s,
            &gw,
            &settings(DEFAULT_ITERATIONS),
            &mut MemorySink::default(),
        )
        .unwrap();
        assert_eq!(report.iterations_run, 16);
        assert_eq!(gw.call_counts()[&Role::Conjecturer], 16);
        assert!(report.accepted.is_empty());
    }

    #[test]
    fn invalid_known_and_unparsable_are_counted() {
        let gw = gateway(vec![
            "Here are some ideas.\ntheorem bad : foo := sorry\ntheorem old : 3 = 3 := sorry\ntheorem np : 4 = 4 := by simp\ntheorem ok : 5 = 5 := sorry",
        ]);
        let mut fixtures = ScriptedFixtures::default();
        fixtures
            .entries
            .push(fixture("validity", "foo", Verdict::Invalid));
        fixtures
            .entries
            .push(fixture("novelty", "3 = 3", Verdict::Known));
        let mut s = session(fixtures);
        let mut sink = MemorySink::default();
        let report =
            run_conjecture_phase(&Library::new(SEED), &mut s, &gw, &settings(1), &mut sink)
                .unwrap();
        assert_eq!(
            (
                report.raw_candidates,
                report.rejected_parse,
                report.rejected_invalid,
                report.rejected_known,
                report.accepted.len()
            ),
            (4, 1, 1, 1, 1)
        );
        let reasons: Vec<&str> = sink
            .of_kind(EventKind::ConjectureRejected)
            .map(|p| p["reason"].as_str().unwrap())
            .collect();
        assert_eq!(reasons, ["parse", "invalid", "known"]);
    }

    #[test]
    fn fatal_gateway_error_keeps_partial_report() {
        let gw = gateway(vec!["theorem a : 1 = 1 := sorry"]);
        let mut s = session(ScriptedFixtures::default());
        let err = run_conjecture_phase(
            &Library::new(SEED),
            &mut s,
            &gw,
            &settings(3),
            &mut MemorySink::default(),
        )
        .unwrap_err();
        assert_eq!(err.report.accepted.len(), 1);
        assert_eq!(err.report.iterations_run, 2);
        assert!(matches!(err.error, EngineError::Gateway(_)));
    }

    #[test]
    fn later_candidates_see_earlier_acceptances() {
        // Same body under a new name in a later iteration: the list dedup
        // catches it before the verifier is consulted.
        let gw = gateway(vec![
            "theorem a : 7 = 7 := sorry",
            "theorem b : 7 = 7 := sorry",
        ]);
        let mut s = session(ScriptedFixtures::default());
        let mut sink = MemorySink::default();
        run_conjecture_phase(&Library::new(SEED), &mut s, &gw, &settings(2), &mut sink).unwrap();
        assert_eq!(sink.of_kind(EventKind::ConjectureAccepted).count(), 1);
    }

    fn candidate() -> impl Strategy<Value = String> {
        (0u8..6, 0u8..5).prop_map(|(n, shape)| match shape {
            0 => format!("theorem t{n} : {n} = {n} := sorry"),
            1 => format!("theorem t{n} : {n} =  {n} := sorry"),
            2 => format!("theorem p{n} : {n} = {n} := by simp"),
            3 => format!("theorem k{n} : {n} + 0 = {n} := sorry"),
            _ => format!("theorem bad{n} : bad{n} := sorry"),
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn counter_identity_holds(
            responses in prop::collection::vec(prop::collection::vec(candidate(), 0..5), 1..6)
        ) {
            let texts: Vec<String> = responses.iter().map(|r| r.join("\n")).collect();
            let gw = gateway(texts.iter().map(String::as_str).collect());
            let mut fixtures = ScriptedFixtures::default();
            for n in 0..6 {
                fixtures.entries.push(fixture("validity", &format!("bad{n}"), Verdict::Invalid));
                fixtures.entries.push(fixture("novelty", &format!("{n} + 0 = {n}"), Verdict::Known));
            }
            let mut s = session(fixtures);
            let iterations = texts.len() as u32;
            let report = run_conjecture_phase(&Library::new(SEED), &mut s, &gw, &settings(iterations), &mut MemorySink::default()).unwrap();
            prop_assert!(report.counters_balance());
            prop_assert_eq!(report.iterations_run, iterations);
            let mut seen = std::collections::HashSet::new();
            for item in report.accepted.items() {
                prop_assert!(seen.insert(crate::model::normalize_statement(item)));
            }
        }
    }
}
