//! The Lean REPL client against a fake REPL process.

use std::time::Duration;

use cpl_core::model::{parse_theorem_declarations, ProofScript, TheoremStatement};
use cpl_core::verifier::{
    LeanRepl, LeanReplConfig, Severity, Timeouts, Verdict, VerifierError, VerifierSession,
};

fn config() -> LeanReplConfig {
    LeanReplConfig {
        command: vec![env!("CARGO_BIN_EXE_fake-lean-repl").to_string()],
        working_dir: None,
        startup_timeout_secs: 10,
    }
}

const SEED: &str = "import Mathlib\nnamespace Topology\ntheorem seed_fact : 2 = 2 := rfl\n";

fn session_with(timeouts: Timeouts) -> VerifierSession {
    VerifierSession::open(Box::new(LeanRepl::new(config())), SEED, timeouts).unwrap()
}

fn session() -> VerifierSession {
    session_with(Timeouts::default())
}

fn stmt(text: &str) -> TheoremStatement {
    parse_theorem_declarations(text)
        .statements
        .into_iter()
        .next()
        .unwrap()
}

fn proof(text: &str) -> ProofScript {
    ProofScript::new(text).unwrap()
}

#[test]
fn seed_errors_are_reported() {
    let err = VerifierSession::open(
        Box::new(LeanRepl::new(config())),
        "def x : := 3\n",
        Timeouts::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, VerifierError::SeedRejected(ref d) if !d.is_empty()),
        "{err}"
    );
}

#[test]
fn missing_program_is_a_transport_error() {
    let c = LeanReplConfig {
        command: vec!["/nonexistent/lean-repl".into()],
        ..config()
    };
    let err =
        VerifierSession::open(Box::new(LeanRepl::new(c)), SEED, Timeouts::default()).unwrap_err();
    assert!(matches!(err, VerifierError::Backend(_)), "{err}");
}

#[test]
fn validity() {
    let mut s = session();
    assert_eq!(
        s.check_validity("", &stmt("theorem a : 1 = 1 := sorry"))
            .unwrap()
            .verdict,
        Verdict::Valid
    );
    let r = s
        .check_validity("", &stmt("theorem a : undefined_ident = 1 := sorry"))
        .unwrap();
    assert_eq!(r.verdict, Verdict::Invalid);
    assert!(r.diagnostics[0].message.contains("unknown identifier"));
}

#[test]
fn duplicate_names_against_context_and_seed() {
    let mut s = session();
    let ctx = "theorem dup : 3 = 3 := sorry\n";
    let r = s
        .check_validity(ctx, &stmt("theorem dup : 4 = 4 := sorry"))
        .unwrap();
    assert_eq!(r.verdict, Verdict::Invalid);
    assert!(r.diagnostics[0].message.contains("already been declared"));
    let r = s
        .check_validity("", &stmt("theorem seed_fact : 5 = 5 := sorry"))
        .unwrap();
    assert_eq!(r.verdict, Verdict::Invalid);
    // The base environment is not polluted by earlier checks.
    assert_eq!(
        s.check_validity("", &stmt("theorem dup : 4 = 4 := sorry"))
            .unwrap()
            .verdict,
        Verdict::Valid
    );
}

#[test]
fn novelty() {
    let mut s = session();
    let known = s
        .check_novelty("", &stmt("theorem t : 1 = 1 := sorry"))
        .unwrap();
    assert_eq!(known.verdict, Verdict::Known);
    assert_eq!(known.closing_term.as_deref(), Some("exact rfl"));
    let novel = s
        .check_novelty("", &stmt("theorem u : 2 = 3 := sorry"))
        .unwrap();
    assert_eq!(novel.verdict, Verdict::Novel);
    assert!(novel.closing_term.is_none());
}

#[test]
fn proofs_and_diagnostic_positions() {
    let mut s = session();
    let target = stmt("theorem a : 1 = 1 := sorry");
    assert_eq!(
        s.verify_proof("", &target, &proof("rfl")).unwrap().verdict,
        Verdict::Verified
    );

    let ctx = "theorem c1 : 7 = 7 := sorry\n\ntheorem c2 : 8 = 8 := rfl\n";
    let r = s
        .verify_proof(ctx, &target, &proof("by\n  exact undefined_ident"))
        .unwrap();
    assert_eq!(r.verdict, Verdict::Failed);
    let err = r
        .diagnostics
        .iter()
        .find(|d| d.severity == Severity::Error)
        .unwrap();
    // Line 2 of the snippet, not of the whole command.
    assert_eq!(err.position.line, 2);
    assert!(
        r.diagnostics.iter().all(|d| !d.message.contains("sorry")),
        "context warnings are dropped"
    );
}

#[test]
fn hidden_sorry_fails_proof() {
    let mut s = session();
    let r = s
        .verify_proof(
            "",
            &stmt("theorem a : 1 = 1 := sorry"),
            &proof("by\n  exact sorryAx _ true"),
        )
        .unwrap();
    assert_eq!(r.verdict, Verdict::Failed);
}

#[test]
fn timeout_then_recovery() {
    let mut s = session_with(Timeouts {
        command: Duration::from_millis(300),
        novelty: Duration::from_millis(300),
    });
    let r = s
        .check_validity("", &stmt("theorem SLEEP : 1 = 1 := sorry"))
        .unwrap();
    assert_eq!(r.verdict, Verdict::Invalid);
    assert!(r.diagnostics[0].message.contains("timed out"));
    // Novelty timeouts count as novel.
    let r = s
        .check_novelty("", &stmt("theorem SLEEP : 1 = 1 := sorry"))
        .unwrap();
    assert_eq!(r.verdict, Verdict::Novel);
    let r = s
        .verify_proof("", &stmt("theorem SLEEP : 1 = 1 := sorry"), &proof("rfl"))
        .unwrap();
    assert_eq!(r.verdict, Verdict::Failed);
    // A fresh process serves the next request.
    assert_eq!(
        s.check_validity("", &stmt("theorem a : 1 = 1 := sorry"))
            .unwrap()
            .verdict,
        Verdict::Valid
    );
}

#[test]
fn crash_is_a_transport_error_then_restarts() {
    let mut s = session();
    let err = s
        .check_validity("", &stmt("theorem CRASH : 1 = 1 := sorry"))
        .unwrap_err();
    assert!(err.is_transport(), "{err}");
    assert_eq!(
        s.check_validity("", &stmt("theorem a : 1 = 1 := sorry"))
            .unwrap()
            .verdict,
        Verdict::Valid
    );
}
