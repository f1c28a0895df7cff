//! Checks against hand-derived expectations for the bundled fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use cpl_core::model::{
    parse_full_declaration, parse_theorem_declarations, proof_length, render_context, LengthMetric,
    Library, ProofScript, Provenance, TheoremStatement,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[test]
fn prose_wrapped_response_yields_one_statement() {
    let text = fs::read_to_string(fixture("conjecturer_prose.txt")).unwrap();
    let parsed = parse_theorem_declarations(&text);
    assert_eq!(parsed.statements.len(), 1);
    let s = &parsed.statements[0];
    assert_eq!(s.name(), "preOpen_of_alphaOpen");
    assert!(s.source_text().ends_with("PreOpen A := sorry"));
    assert_eq!(parsed.skipped, 0);
}

#[test]
fn published_alpha_open_proof_has_64_code_lines() {
    let text = fs::read_to_string(fixture("alpha_open_inter_proof.lean")).unwrap();
    let (stmt, proof) = parse_full_declaration(&text).unwrap();
    assert_eq!(stmt.name(), "intersection_of_alpha_open_sets_is_alpha_open");
    let proof = ProofScript::new(proof).unwrap();
    // Counted by hand: 110 lines after `:=`, minus 46 blank or comment-only.
    assert_eq!(proof_length(&proof, LengthMetric::Lines), 64);
}

const SEED: &str = "import Mathlib\n";

/// Entry `i` renders as `theorem e<i> : True := by\n  trivial\n  -- xxx…`.
/// Header `theorem e0 : True :=` is 20 chars, then a space, `by` (2), newline,
/// `  trivial` (9), newline, `  -- ` (5): 39 chars before the padding.
/// Padding to 298 chars plus the blank line around each block makes every
/// block exactly 300 chars.
fn padded_library(n: usize) -> Library {
    let mut lib = Library::new(SEED);
    for i in 0..n {
        let stmt = TheoremStatement::from_signature(&format!("e{i}"), ": True").unwrap();
        let proof = format!("by\n  trivial\n  -- {}", "x".repeat(298 - 39));
        lib.append(
            stmt,
            ProofScript::new(proof).unwrap(),
            Provenance::Fixture,
            "2025-01-01T00:00:00Z".parse().unwrap(),
        );
    }
    lib
}

#[test]
fn budget_of_1000_drops_the_oldest_entry() {
    let lib = padded_library(4);
    assert_eq!(lib.entries()[0].declaration().chars().count(), 298);
    // Seed 15 + 4 × 300 = 1215 > 1000; dropping one leaves 915.
    let r = render_context(&lib, &[], 1000).unwrap();
    assert_eq!(r.dropped, 1);
    assert_eq!(r.included, [1, 2, 3]);
    assert_eq!(r.full().chars().count(), 915);
    assert!(!r.full().contains("theorem e0 "));
    assert!(r.warning.is_some());

    // 1215 fits exactly; one char less drops an entry.
    assert_eq!(render_context(&lib, &[], 1215).unwrap().dropped, 0);
    assert_eq!(render_context(&lib, &[], 1214).unwrap().dropped, 1);
    // Seed plus one block is 315; below that only the seed fits.
    assert_eq!(render_context(&lib, &[], 314).unwrap().dropped, 4);
}
