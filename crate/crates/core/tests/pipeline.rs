use std::fs;
use std::path::{Path, PathBuf};

use cpl_core::events::{normalize_timestamps, read_events, EventKind};
use cpl_core::model::parse_library_file;
use cpl_core::orchestrator::{RunConfig, RunError, RunStatus, Runner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn config(set: &str, out: &Path) -> RunConfig {
    let mut c = RunConfig::load(&fixture(set).join("config.toml")).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

fn run(set: &str, out: &Path) -> RunStatus {
    Runner::from_config(config(set, out))
        .unwrap()
        .run()
        .unwrap()
        .status
}

fn resume(set: &str, out: &Path) -> Result<RunStatus, RunError> {
    let mut c = config(set, out);
    c.resume = true;
    Ok(Runner::from_config(c)?.run()?.status)
}

fn library_names(dir: &Path) -> Vec<String> {
    let lib = parse_library_file(&fs::read_to_string(dir.join("library.lean")).unwrap()).unwrap();
    lib.entries()
        .iter()
        .map(|e| e.statement.name().to_string())
        .collect()
}

#[test]
fn three_loop_fixture_builds_expected_library() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("cpl3", dir.path()), RunStatus::Complete);
    assert_eq!(
        library_names(dir.path()),
        ["alphaOpen_semiOpen", "isOpen_alphaOpen"]
    );

    let events = read_events(&dir.path().join("events.jsonl")).unwrap();
    let outcomes: Vec<(String, String)> = events
        .iter()
        .filter(|e| e.kind == EventKind::ProofOutcome)
        .map(|e| {
            (
                e.payload["name"].as_str().unwrap().into(),
                e.payload["status"].as_str().unwrap().into(),
            )
        })
        .collect();
    assert_eq!(
        outcomes,
        [
            ("alphaOpen_semiOpen".to_string(), "verified".to_string()),
            ("semiOpen_inter".into(), "declared_unprovable".into()),
            ("isOpen_alphaOpen".into(), "verified".into()),
        ]
    );
    let reasons: Vec<&str> = events
        .iter()
        .filter(|e| e.kind == EventKind::ConjectureRejected)
        .map(|e| e.payload["reason"].as_str().unwrap())
        .collect();
    assert_eq!(reasons, ["known", "parse", "known", "invalid"]);
    assert_eq!(events.last().unwrap().kind, EventKind::RunComplete);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["library_len"], 2);
    assert_eq!(report["proofs"]["declared_unprovable"], 1);
    assert_eq!(report["transcript_calls"]["conjecturer"], 6);
    assert_eq!(report["transcript_calls"]["prover"], 6);
}

#[test]
fn replay_runs_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run("cpl3", a.path());
    run("cpl3", b.path());
    let read = |d: &Path, f: &str| fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(
        read(a.path(), "library.lean"),
        read(b.path(), "library.lean")
    );
    assert_eq!(
        normalize_timestamps(&read(a.path(), "events.jsonl")),
        normalize_timestamps(&read(b.path(), "events.jsonl"))
    );
    // With the logical clock the raw logs match too.
    assert_eq!(
        read(a.path(), "events.jsonl"),
        read(b.path(), "events.jsonl")
    );
}

#[test]
fn existing_run_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    run("cpl3", dir.path());
    let err = Runner::from_config(config("cpl3", dir.path()))
        .unwrap()
        .run()
        .unwrap_err();
    assert!(matches!(err, RunError::OutputExists(_)));
}

#[test]
fn resuming_a_complete_run_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    run("cpl3", dir.path());
    let before = fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    let lib = fs::read_to_string(dir.path().join("library.lean")).unwrap();
    assert_eq!(
        resume("cpl3", dir.path()).unwrap(),
        RunStatus::AlreadyComplete
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("events.jsonl")).unwrap(),
        before
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("library.lean")).unwrap(),
        lib
    );
}

#[test]
fn resume_without_a_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        resume("cpl3", dir.path()),
        Err(RunError::NothingToResume(_))
    ));
}

fn halted_run(set: &str, out: &Path, after: usize) {
    let mut runner = Runner::from_config(config(set, out)).unwrap();
    runner.halt_after_theorems(after);
    assert_eq!(runner.run().unwrap().status, RunStatus::Halted);
}

#[test]
fn tampered_library_blocks_resume() {
    let dir = tempfile::tempdir().unwrap();
    halted_run("kill", dir.path(), 4);
    let path = dir.path().join("library.lean");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("by\n  omega", "by\n  decide", 1)).unwrap();
    let err = resume("kill", dir.path()).unwrap_err();
    assert!(matches!(err, RunError::Inconsistent(_)), "{err}");
    assert!(err.to_string().contains("does not match"), "{err}");
}

#[test]
fn missing_library_entry_blocks_resume() {
    let dir = tempfile::tempdir().unwrap();
    halted_run("kill", dir.path(), 3);
    let path = dir.path().join("library.lean");
    let lib = parse_library_file(&fs::read_to_string(&path).unwrap()).unwrap();
    let shorter = cpl_core::model::render_library_file(&lib.prefix(1));
    fs::write(&path, shorter).unwrap();
    assert!(matches!(
        resume("kill", dir.path()),
        Err(RunError::Inconsistent(_))
    ));
}

fn uninterrupted(set: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    run(set, dir.path());
    let lib = fs::read_to_string(dir.path().join("library.lean")).unwrap();
    (dir, lib)
}

#[test]
fn resume_after_every_kill_point_of_small_fixture() {
    let (_d, expected) = uninterrupted("cpl3");
    for k in 1..=2 {
        let dir = tempfile::tempdir().unwrap();
        halted_run("cpl3", dir.path(), k);
        assert_eq!(resume("cpl3", dir.path()).unwrap(), RunStatus::Complete);
        assert_eq!(
            fs::read_to_string(dir.path().join("library.lean")).unwrap(),
            expected,
            "kill point {k}"
        );
    }
}

#[test]
fn resume_after_random_kill_points() {
    let (_d, expected) = uninterrupted("kill");
    let seed: u64 = std::env::var("CPL_KILL_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(rand::random);
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..3 {
        let k = rng.gen_range(1..=16);
        let dir = tempfile::tempdir().unwrap();
        halted_run("kill", dir.path(), k);
        assert_eq!(resume("kill", dir.path()).unwrap(), RunStatus::Complete);
        let got = fs::read_to_string(dir.path().join("library.lean")).unwrap();
        assert_eq!(got, expected, "kill point {k} (CPL_KILL_SEED={seed})");
        let events = read_events(&dir.path().join("events.jsonl")).unwrap();
        assert_eq!(
            events
                .iter()
                .filter(|e| e.kind == EventKind::Resumed)
                .count(),
            1
        );
    }
}

#[test]
fn crash_between_library_write_and_event_is_recovered() {
    let (_d, expected) = uninterrupted("kill");
    let dir = tempfile::tempdir().unwrap();
    halted_run("kill", dir.path(), 5);
    // Drop the last theorem_added line and leave a half-written one, as if
    // the process died while logging it.
    let path = dir.path().join("events.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let last = lines.pop().unwrap();
    assert!(last.contains("theorem_added"));
    let mut cut = lines.join("\n");
    cut.push('\n');
    cut.push_str(&last[..last.len() / 2]);
    fs::write(&path, cut).unwrap();

    assert_eq!(resume("kill", dir.path()).unwrap(), RunStatus::Complete);
    assert_eq!(
        fs::read_to_string(dir.path().join("library.lean")).unwrap(),
        expected
    );
}

#[test]
fn resume_twice_in_a_row() {
    let (_d, expected) = uninterrupted("kill");
    let dir = tempfile::tempdir().unwrap();
    halted_run("kill", dir.path(), 2);
    let mut c = config("kill", dir.path());
    c.resume = true;
    let mut runner = Runner::from_config(c).unwrap();
    runner.halt_after_theorems(5);
    assert_eq!(runner.run().unwrap().status, RunStatus::Halted);
    assert_eq!(resume("kill", dir.path()).unwrap(), RunStatus::Complete);
    assert_eq!(
        fs::read_to_string(dir.path().join("library.lean")).unwrap(),
        expected
    );

    // Reports count each loop once even though some loops ran twice.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["loops_completed"], 6);
    assert_eq!(report["library_len"], 16);
    assert_eq!(report["proofs"]["verified"], 16);
    assert_eq!(report["proofs"]["declared_unprovable"], 7);
}

#[test]
fn simple_loop_with_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let replay = dir.path().join("replay");
    fs::create_dir_all(&replay).unwrap();
    let responses = [
        "theorem first : (2 : ℕ) + 2 = 4 := by\n  simp",
        "```lean\ntheorem first : (2 : ℕ) + 2 = 4 := by\n  norm_num\n```",
        "no theorem here",
        "theorem second : (3 : ℕ) ≤ 5 := by\n  decide",
    ];
    let lines: Vec<String> = responses
        .iter()
        .enumerate()
        .map(|(i, r)| {
            serde_json::json!({"index": i, "system_prompt": "", "user_content": "", "response": r})
                .to_string()
        })
        .collect();
    fs::write(replay.join("simple_loop.jsonl"), lines.join("\n")).unwrap();
    let fixtures = serde_json::json!({"entries": [
        {"op": "proof", "statement": "theorem first : (2 : ℕ) + 2 = 4 := sorry", "proof": "by\n  norm_num", "verdict": "verified"},
        {"op": "proof", "statement": "theorem second : (3 : ℕ) ≤ 5 := sorry", "proof": "by\n  decide", "verdict": "verified"},
    ]});
    fs::write(dir.path().join("verifier.json"), fixtures.to_string()).unwrap();
    let toml = format!(
        "mode = \"simple_loop\"\nseed = {:?}\nloops = 2\nmax_trials = 3\noutput_dir = \"out\"\nclock = \"logical\"\n\
         [provider]\nkind = \"replay\"\ndir = \"replay\"\n[retry]\nmax_attempts = 1\n\
         [verifier]\nbackend = \"scripted\"\nfixtures = \"verifier.json\"\n",
        fixture("seed.lean")
    );
    fs::write(dir.path().join("run.toml"), toml).unwrap();
    let c = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let out = c.output_dir.clone();
    Runner::from_config(c).unwrap().run().unwrap();

    assert_eq!(library_names(&out), ["first", "second"]);
    let lib = fs::read_to_string(out.join("library.lean")).unwrap();
    assert!(lib.contains("-- [cpl:entry 0 simple_loop"), "{lib}");
    let transcript = fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    let second_call: serde_json::Value =
        serde_json::from_str(transcript.lines().nth(1).unwrap()).unwrap();
    let content = second_call["user_content"].as_str().unwrap();
    assert!(
        content.contains("previous attempt:\ntheorem first"),
        "{content}"
    );
    assert!(content.contains("scripted verdict: failed"), "{content}");
    let events = read_events(&out.join("events.jsonl")).unwrap();
    assert_eq!(
        events
            .iter()
            .filter(|e| e.kind == EventKind::ProofAttempt)
            .count(),
        4
    );
}
