//! Prover loop: ask for a proof, check it, feed the errors back, and stop on
//! success, on an empty answer, or when trials run out.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::events::{EventKind, EventSink};
use crate::gateway::{prompts, ChatRequest, Gateway, Role};
use crate::model::{
    parse_full_declaration, render_context, strip_code_fences, Library, ProofScript,
    TheoremStatement,
};
use crate::verifier::{format_diagnostics, CheckResult, Verdict, VerifierSession};
use crate::{EngineError, RolePrompt};

pub const DEFAULT_MAX_TRIALS: u32 = 16;

/// Which condition the prover is told to answer empty on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    #[default]
    NotProvable,
    False,
}

impl PromptVariant {
    pub fn default_prompt(self) -> &'static str {
        match self {
            PromptVariant::NotProvable => prompts::PROVER,
            PromptVariant::False => prompts::PROVER_FALSE_VARIANT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofStatus {
    Verified,
    FailedExhausted,
    DeclaredUnprovable,
}

impl ProofStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ProofStatus::Verified => "verified",
            ProofStatus::FailedExhausted => "failed_exhausted",
            ProofStatus::DeclaredUnprovable => "declared_unprovable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofAttempt {
    pub proof_text: String,
    /// Absent for an empty answer, which is never sent to the verifier.
    pub check: Option<CheckResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOutcome {
    pub status: ProofStatus,
    pub attempts: Vec<ProofAttempt>,
    pub final_proof: Option<ProofScript>,
    /// Trials lost to model or verifier transport failures.
    pub transport_failures: u32,
}

#[derive(Debug, Clone)]
pub struct ProverSettings {
    pub max_trials: u32,
    pub context_budget: usize,
    pub prompt: RolePrompt,
    /// Extra fields copied into every event, e.g. the loop number.
    pub tags: Map<String, Value>,
}

impl ProverSettings {
    pub fn new(variant: PromptVariant, max_trials: u32, context_budget: usize) -> Self {
        Self {
            max_trials,
            context_budget,
            prompt: RolePrompt::new(variant.default_prompt()),
            tags: Map::new(),
        }
    }
}

fn tagged(tags: &Map<String, Value>, mut payload: Value) -> Value {
    let obj = payload.as_object_mut().expect("payload is an object");
    for (k, v) in tags {
        obj.insert(k.clone(), v.clone());
    }
    payload
}

/// User content for a retry: the context followed by the previous attempt
/// and its diagnostics.
pub fn feedback_prompt(context: &str, previous_proof: &str, previous: &CheckResult) -> String {
    let mut out = context.trim_end().to_string();
    out.push_str("\n\nprevious attempt:\n");
    out.push_str(previous_proof);
    out.push_str("\n\nerrors:\n");
    out.push_str(&format_diagnostics(&previous.diagnostics));
    out.push('\n');
    out
}

/// Extract the proof text from a model answer. Code fences are removed, and
/// an answer that repeats the whole declaration is cut down to its proof.
pub fn extract_proof(response: &str) -> String {
    let stripped = strip_code_fences(response).text;
    let text = stripped.trim();
    if text.starts_with("theorem ") {
        if let Ok((_, proof)) = parse_full_declaration(text) {
            return proof.trim().to_string();
        }
    }
    text.to_string()
}

/// Elaborate `stmt` with `proof`, retrying once on a verifier transport
/// failure. The flag is set when both tries failed and the check is synthetic.
pub(crate) fn verify_with_retry(
    session: &mut VerifierSession,
    context: &str,
    stmt: &TheoremStatement,
    proof: &ProofScript,
) -> (CheckResult, bool) {
    match session.verify_proof(context, stmt, proof) {
        Ok(r) => (r, false),
        Err(first) => {
            tracing::warn!(
                theorem = stmt.name(),
                "verifier failed, retrying once: {first}"
            );
            match session.verify_proof(context, stmt, proof) {
                Ok(r) => (r, false),
                Err(e) => (
                    CheckResult::synthetic_failure(format!("verifier unavailable: {e}")),
                    true,
                ),
            }
        }
    }
}

pub fn prove(
    stmt: &TheoremStatement,
    library: &Library,
    session: &mut VerifierSession,
    gateway: &Gateway,
    settings: &ProverSettings,
    events: &mut dyn EventSink,
) -> Result<ProofOutcome, EngineError> {
    let context = render_context(library, std::slice::from_ref(stmt), settings.context_budget)?;
    // The verifier sees exactly the entries the model saw.
    let verifier_context = context.dynamic_library_part();
    let mut attempts: Vec<ProofAttempt> = Vec::new();
    let mut transport_failures = 0;
    let max_trials = settings.max_trials.max(1);

    let finish = |status, attempts, final_proof, transport_failures, events: &mut dyn EventSink| {
        let outcome = ProofOutcome {
            status,
            attempts,
            final_proof,
            transport_failures,
        };
        events.emit(
            EventKind::ProofOutcome,
            tagged(
                &settings.tags,
                json!({
                    "name": stmt.name(),
                    "status": status,
                    "trials": outcome.attempts.len(),
                    "transport_failures": transport_failures,
                }),
            ),
        )?;
        Ok::<_, EngineError>(outcome)
    };

    for trial in 1..=max_trials {
        let user_content = match attempts.last() {
            Some(ProofAttempt {
                proof_text,
                check: Some(check),
            }) => feedback_prompt(context.full(), proof_text, check),
            _ => context.full().to_string(),
        };
        let request = ChatRequest {
            role: Role::Prover,
            system_prompt: settings.prompt.system_prompt.clone(),
            user_content,
            sampling: settings.prompt.sampling,
        };

        let (proof_text, check) = match gateway.complete(&request) {
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                transport_failures += 1;
                (
                    String::new(),
                    Some(CheckResult::synthetic_failure(format!(
                        "model call failed: {e}"
                    ))),
                )
            }
            Ok(response) => {
                let proof_text = extract_proof(&response.text);
                if proof_text.is_empty() {
                    (proof_text, None)
                } else {
                    let check = match ProofScript::new(proof_text.clone()) {
                        Err(e) => CheckResult::synthetic_failure(e.to_string()),
                        Ok(proof) => {
                            let (check, lost) =
                                verify_with_retry(session, verifier_context, stmt, &proof);
                            if lost {
                                transport_failures += 1;
                            }
                            check
                        }
                    };
                    (proof_text, Some(check))
                }
            }
        };

        events.emit(
            EventKind::ProofAttempt,
            tagged(
                &settings.tags,
                json!({
                    "name": stmt.name(),
                    "trial": trial,
                    "proof": proof_text,
                    "empty_response": check.is_none() && proof_text.is_empty(),
                    "verdict": check.as_ref().map(|c| c.verdict),
                    "diagnostics": check.as_ref().map(|c| &c.diagnostics),
                }),
            ),
        )?;

        let verified = check
            .as_ref()
            .is_some_and(|c| c.verdict == Verdict::Verified);
        let empty = check.is_none();
        attempts.push(ProofAttempt {
            proof_text: proof_text.clone(),
            check,
        });
        if verified {
            let proof = ProofScript::new(proof_text).expect("verified proofs are valid scripts");
            return finish(
                ProofStatus::Verified,
                attempts,
                Some(proof),
                transport_failures,
                events,
            );
        }
        if empty {
            return finish(
                ProofStatus::DeclaredUnprovable,
                attempts,
                None,
                transport_failures,
                events,
            );
        }
    }
    finish(
        ProofStatus::FailedExhausted,
        attempts,
        None,
        transport_failures,
        events,
    )
}
