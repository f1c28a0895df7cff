//! Natural-language proving session with manual grading.
//!
//! Layout under the session directory:
//! `nl_responses/manifest.json` lists the responses, `nl_responses/<id>.txt`
//! holds each raw text, and `grades.jsonl` is the append-only grade history
//! (the latest grade for an id wins).

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::Ratio;
use crate::gateway::{ChatRequest, Gateway, Role};
use crate::RolePrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlCategory {
    CorrectlyProven,
    Gap,
    RejectedAsFalse,
}

impl NlCategory {
    pub const ALL: [NlCategory; 3] = [
        NlCategory::CorrectlyProven,
        NlCategory::Gap,
        NlCategory::RejectedAsFalse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NlCategory::CorrectlyProven => "correctly_proven",
            NlCategory::Gap => "gap",
            NlCategory::RejectedAsFalse => "rejected_as_false",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s.replace('-', "_"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlResponse {
    pub id: String,
    /// Absent when the model call failed; such responses are not graded.
    pub file: Option<String>,
    pub fetch_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlGrade {
    pub response_id: String,
    pub category: NlCategory,
    pub grader: String,
    pub note: String,
    pub graded_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum NlError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no response with id `{0}`")]
    UnknownResponse(String),
    #[error("response `{0}` was never fetched and cannot be graded")]
    FailedFetch(String),
    #[error("cannot finalize: {} responses are ungraded: {}", .0.len(), .0.join(", "))]
    Pending(Vec<String>),
    #[error("model call failed fatally: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> NlError + '_ {
    move |source| NlError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn responses_dir(dir: &Path) -> PathBuf {
    dir.join("nl_responses")
}

fn manifest_path(dir: &Path) -> PathBuf {
    responses_dir(dir).join("manifest.json")
}

fn grades_path(dir: &Path) -> PathBuf {
    dir.join("grades.jsonl")
}

/// A literal "False" answer, the prompt's signal for rejecting the statement.
pub fn is_false_answer(text: &str) -> bool {
    text.trim()
        .trim_matches(|c| c == '"' || c == '.' || c == '`')
        .trim()
        == "False"
}

/// User content for each call: the definitions, then the statement.
pub fn nl_user_content(definitions: &str, statement: &str) -> String {
    if definitions.trim().is_empty() {
        statement.to_string()
    } else {
        format!("{}\n\n{statement}", definitions.trim_end())
    }
}

/// Ask for `n` natural-language proofs and store them for grading. A
/// literal "False" is graded `rejected_as_false` automatically.
pub fn nl_session(
    dir: &Path,
    definitions: &str,
    statement: &str,
    n: u32,
    prompt: &RolePrompt,
    gateway: &Gateway,
    now: &mut dyn FnMut() -> DateTime<Utc>,
) -> Result<Vec<NlResponse>, NlError> {
    let rdir = responses_dir(dir);
    fs::create_dir_all(&rdir).map_err(io_at(&rdir))?;
    let mut responses = load_manifest(dir).unwrap_or_default();
    let request = ChatRequest {
        role: Role::NlProver,
        system_prompt: prompt.system_prompt.clone(),
        user_content: nl_user_content(definitions, statement),
        sampling: prompt.sampling,
    };
    for _ in 0..n {
        let id = format!("r{:03}", responses.len());
        match gateway.complete(&request) {
            Ok(resp) => {
                let file = format!("{id}.txt");
                let path = rdir.join(&file);
                fs::write(&path, &resp.text).map_err(io_at(&path))?;
                if is_false_answer(&resp.text) {
                    append_grade(
                        dir,
                        &NlGrade {
                            response_id: id.clone(),
                            category: NlCategory::RejectedAsFalse,
                            grader: "auto".into(),
                            note: "literal False answer".into(),
                            graded_at: now(),
                        },
                    )?;
                }
                responses.push(NlResponse {
                    id,
                    file: Some(file),
                    fetch_error: None,
                });
            }
            Err(e) if !e.is_fatal() => responses.push(NlResponse {
                id,
                file: None,
                fetch_error: Some(e.to_string()),
            }),
            Err(e) => {
                save_manifest(dir, &responses)?;
                return Err(e.into());
            }
        }
        save_manifest(dir, &responses)?;
    }
    Ok(responses)
}

fn save_manifest(dir: &Path, responses: &[NlResponse]) -> Result<(), NlError> {
    let path = manifest_path(dir);
    let text = serde_json::to_string_pretty(responses).expect("manifest serializes");
    crate::orchestrator::write_atomic(&path, &text).map_err(io_at(&path))
}

pub fn load_manifest(dir: &Path) -> Result<Vec<NlResponse>, NlError> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(io_at(&path))?;
    serde_json::from_str(&text).map_err(|e| NlError::Io {
        path,
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })
}

fn append_grade(dir: &Path, grade: &NlGrade) -> Result<(), NlError> {
    let path = grades_path(dir);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_at(&path))?;
    writeln!(
        f,
        "{}",
        serde_json::to_string(grade).expect("grade serializes")
    )
    .map_err(io_at(&path))
}

/// Every grade ever recorded, oldest first.
pub fn grade_history(dir: &Path) -> Result<Vec<NlGrade>, NlError> {
    let path = grades_path(dir);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(io_at(&path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| NlError::Io {
                path: path.clone(),
                source: io::Error::new(io::ErrorKind::InvalidData, e),
            })
        })
        .collect()
}

/// Record a grade; re-grading appends a new record that supersedes the old.
pub fn grade_response(
    dir: &Path,
    response_id: &str,
    category: NlCategory,
    grader: &str,
    note: &str,
    graded_at: DateTime<Utc>,
) -> Result<NlGrade, NlError> {
    let responses = load_manifest(dir)?;
    let response = responses
        .iter()
        .find(|r| r.id == response_id)
        .ok_or_else(|| NlError::UnknownResponse(response_id.to_string()))?;
    if response.file.is_none() {
        return Err(NlError::FailedFetch(response_id.to_string()));
    }
    let grade = NlGrade {
        response_id: response_id.to_string(),
        category,
        grader: grader.to_string(),
        note: note.to_string(),
        graded_at,
    };
    append_grade(dir, &grade)?;
    Ok(grade)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlReport {
    pub responses: usize,
    pub graded: usize,
    pub counts: BTreeMap<NlCategory, usize>,
    pub rates: BTreeMap<NlCategory, Ratio>,
    pub pending: Vec<String>,
    pub failed_fetch: Vec<String>,
    /// Grades superseded by a later re-grade.
    pub regrades: usize,
}

/// Breakdown over fetched responses. With `finalize`, any ungraded response
/// is an error.
pub fn nl_report(dir: &Path, finalize: bool) -> Result<NlReport, NlError> {
    let responses = load_manifest(dir)?;
    let history = grade_history(dir)?;
    let mut latest: BTreeMap<&str, NlCategory> = BTreeMap::new();
    for g in &history {
        latest.insert(g.response_id.as_str(), g.category);
    }
    let fetched: Vec<&NlResponse> = responses.iter().filter(|r| r.file.is_some()).collect();
    let pending: Vec<String> = fetched
        .iter()
        .filter(|r| !latest.contains_key(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    if finalize && !pending.is_empty() {
        return Err(NlError::Pending(pending));
    }
    let mut counts: BTreeMap<NlCategory, usize> = NlCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for r in &fetched {
        if let Some(c) = latest.get(r.id.as_str()) {
            *counts.get_mut(c).expect("all categories present") += 1;
        }
    }
    let graded = fetched.len() - pending.len();
    let rates = counts
        .iter()
        .map(|(&c, &n)| (c, Ratio::new(n, fetched.len())))
        .collect();
    Ok(NlReport {
        responses: fetched.len(),
        graded,
        counts,
        rates,
        pending,
        failed_fetch: responses
            .iter()
            .filter(|r| r.file.is_none())
            .map(|r| r.id.clone())
            .collect(),
        regrades: history.len() - latest.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{prompts, ReplayProvider, RetryPolicy};
    use std::sync::Arc;

    fn run(responses: Vec<&str>) -> (tempfile::TempDir, Vec<NlResponse>) {
        let dir = tempfile::tempdir().unwrap();
        let mut map = std::collections::HashMap::new();
        map.insert(
            Role::NlProver,
            responses.iter().map(|s| s.to_string()).collect(),
        );
        let n = responses.len() as u32;
        let gw = Gateway::with_provider(
            RetryPolicy {
                max_attempts: 1,
                ..Default::default()
            },
            Arc::new(ReplayProvider::from_responses(map)),
        );
        let mut now = || "2000-01-01T00:00:00Z".parse().unwrap();
        let out = nl_session(
            dir.path(),
            "def P := True",
            prompts::NL_ALPHA_OPEN_STATEMENT,
            n,
            &RolePrompt::new(prompts::NL_PROVER),
            &gw,
            &mut now,
        )
        .unwrap();
        (dir, out)
    }

    fn ts() -> DateTime<Utc> {
        "2000-01-01T00:00:00Z".parse().unwrap()
    }

    #[test]
    fn false_is_auto_graded_and_prose_is_pending() {
        let (dir, out) = run(vec!["False", "Let x ∈ A ∩ B. Then ..."]);
        assert_eq!(out.len(), 2);
        let report = nl_report(dir.path(), false).unwrap();
        assert_eq!(report.counts[&NlCategory::RejectedAsFalse], 1);
        assert_eq!(report.pending, ["r001"]);
        let err = nl_report(dir.path(), true).unwrap_err();
        assert!(err.to_string().contains("r001"));
    }

    #[test]
    fn grading_and_regrading() {
        let (dir, _) = run(vec!["proof one", "proof two"]);
        grade_response(
            dir.path(),
            "r000",
            NlCategory::Gap,
            "alice",
            "missing step",
            ts(),
        )
        .unwrap();
        grade_response(
            dir.path(),
            "r001",
            NlCategory::CorrectlyProven,
            "alice",
            "",
            ts(),
        )
        .unwrap();
        let report = nl_report(dir.path(), true).unwrap();
        assert_eq!(report.counts[&NlCategory::Gap], 1);
        grade_response(
            dir.path(),
            "r000",
            NlCategory::CorrectlyProven,
            "bob",
            "step is fine",
            ts(),
        )
        .unwrap();
        let report = nl_report(dir.path(), true).unwrap();
        assert_eq!(report.counts[&NlCategory::CorrectlyProven], 2);
        assert_eq!(report.regrades, 1);
        assert_eq!(grade_history(dir.path()).unwrap().len(), 3);
        assert!(matches!(
            grade_response(dir.path(), "r999", NlCategory::Gap, "x", "", ts()),
            Err(NlError::UnknownResponse(_))
        ));
    }

    #[test]
    fn false_detection() {
        assert!(is_false_answer("False\n"));
        assert!(is_false_answer("\"False\""));
        assert!(!is_false_answer("False. Here is a counterexample"));
        assert!(!is_false_answer("false"));
    }

    #[test]
    fn category_parsing() {
        assert_eq!(
            NlCategory::parse("rejected-as-false"),
            Some(NlCategory::RejectedAsFalse)
        );
        assert_eq!(NlCategory::parse("gap"), Some(NlCategory::Gap));
        assert_eq!(NlCategory::parse("nope"), None);
    }
}
