//! Run drivers: the conjecturing-proving loop, the single-agent baseline,
//! persistence of the library and event log, and resumption.

mod config;
pub mod resume;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

pub use config::{
    ConfigError, EvalConfig, Prompts, ProviderConfig, RunConfig, RunMode, VerifierConfig,
    API_KEY_ENV, DEFAULT_CONTEXT_BUDGET, DEFAULT_CPL_LOOPS, DEFAULT_FOCUSED_PREFIX,
    DEFAULT_FOCUSED_RUNS, DEFAULT_NL_RUNS, DEFAULT_SIMPLE_LOOPS,
};
use resume::{Checkpoint, ConsistencyError, LogState};

use crate::conjecture::{run_conjecture_phase, ConjectureSettings};
use crate::events::{read_events, Clock, EventKind, EventLog, EventSink};
use crate::gateway::{ChatRequest, Gateway, Role};
use crate::model::{
    parse_full_declaration, parse_library_file, render_context, render_library_file,
    strip_code_fences, Library, ModelError, ProofScript, Provenance, TheoremStatement,
};
use crate::prover::{feedback_prompt, prove, verify_with_retry, ProofStatus, ProverSettings};
use crate::verifier::{CheckResult, Verdict, VerifierBackend, VerifierError, VerifierSession};
use crate::EngineError;

/// File names inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn library(&self) -> PathBuf {
        self.dir.join("library.lean")
    }
    pub fn events(&self) -> PathBuf {
        self.dir.join("events.jsonl")
    }
    pub fn transcript(&self) -> PathBuf {
        self.dir.join("transcript.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("run_config.json")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Resume of a run that had already finished; nothing was done.
    AlreadyComplete,
    /// Stopped by [`Runner::halt_after_theorems`].
    Halted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub loops_completed: usize,
    pub library_len: usize,
    /// Theorems added by this invocation.
    pub theorems_added: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Library { path: PathBuf, source: ModelError },
    #[error("cannot resume: {0}")]
    Inconsistent(#[from] ConsistencyError),
    #[error(
        "{0} already holds a run; pass --resume to continue it or choose another output directory"
    )]
    OutputExists(PathBuf),
    #[error("nothing to resume: {0} does not exist")]
    NothingToResume(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Replace `path` with `contents` so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    io::Write::write_all(&mut tmp, contents.as_bytes())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // Temp files are created 0600; results should read like normal files.
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

enum Flow {
    Continue,
    Halt,
}

/// Drives one run directory.
pub struct Runner {
    config: RunConfig,
    gateway: Gateway,
    backend: Option<Box<dyn VerifierBackend>>,
    session: Option<VerifierSession>,
    seed: String,
    paths: RunPaths,
    halt_after: Option<usize>,
    added: usize,
}

impl Runner {
    pub fn from_config(config: RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let gateway = config.build_gateway()?;
        let backend = config.build_verifier()?;
        Self::with_parts(config, gateway, backend)
    }

    /// Use a prepared gateway and verifier backend instead of building them
    /// from the config.
    pub fn with_parts(
        config: RunConfig,
        gateway: Gateway,
        backend: Box<dyn VerifierBackend>,
    ) -> Result<Self, RunError> {
        let seed = fs::read_to_string(&config.seed).map_err(io_err(&config.seed))?;
        let paths = RunPaths::new(&config.output_dir);
        Ok(Self {
            config,
            gateway,
            backend: Some(backend),
            session: None,
            seed,
            paths,
            halt_after: None,
            added: 0,
        })
    }

    /// Stop right after the `n`th theorem is added, without writing any
    /// further events, as if the process had been killed.
    pub fn halt_after_theorems(&mut self, n: usize) {
        self.halt_after = Some(n);
    }

    pub fn paths(&self) -> &RunPaths {
        &self.paths
    }

    fn session(&mut self) -> Result<&mut VerifierSession, RunError> {
        if self.session.is_none() {
            let backend = self
                .backend
                .take()
                .expect("backend present until the session opens");
            self.session = Some(VerifierSession::open(
                backend,
                &self.seed,
                self.config.timeouts,
            )?);
        }
        Ok(self.session.as_mut().expect("opened above"))
    }

    fn write_library(&self, library: &Library) -> Result<(), RunError> {
        let path = self.paths.library();
        write_atomic(&path, &render_library_file(library)).map_err(io_err(&path))
    }

    pub fn run(&mut self) -> Result<RunSummary, RunError> {
        let paths = self.paths.clone();
        fs::create_dir_all(&paths.dir).map_err(io_err(&paths.dir))?;

        let (mut library, mut log, start_loop) = if self.config.resume {
            if !paths.events().exists() {
                return Err(RunError::NothingToResume(paths.events()));
            }
            let events = read_events(&paths.events()).map_err(io_err(&paths.events()))?;
            let text = fs::read_to_string(paths.library()).map_err(io_err(&paths.library()))?;
            let file = parse_library_file(&text).map_err(|source| RunError::Library {
                path: paths.library(),
                source,
            })?;
            let point = match resume::inspect(&self.seed, &events, &file)? {
                LogState::Complete => {
                    tracing::info!("run in {} is already complete", paths.dir.display());
                    return Ok(RunSummary {
                        status: RunStatus::AlreadyComplete,
                        loops_completed: events
                            .iter()
                            .filter(|e| e.kind == EventKind::LoopComplete)
                            .count(),
                        library_len: file.len(),
                        theorems_added: 0,
                    });
                }
                LogState::Resumable(p) => p,
            };
            self.session()?;
            self.write_library(&point.library)?;
            self.gateway.set_call_counts(&point.checkpoint.calls);
            self.gateway
                .log_transcript_to(&paths.transcript())
                .map_err(io_err(&paths.transcript()))?;
            let mut log = EventLog::append_to(
                &paths.events(),
                point.next_sequence,
                Clock::new(self.config.clock),
            )
            .map_err(io_err(&paths.events()))?;
            log.emit(
                EventKind::Resumed,
                json!({
                    "from_loop": point.next_loop,
                    "library_len": point.library.len(),
                    "discarded_entries": point.discarded,
                }),
            )
            .map_err(io_err(&paths.events()))?;
            log.clock().set_ticks(point.checkpoint.clock_ticks);
            (point.library, log, point.next_loop)
        } else {
            if paths.events().exists() {
                return Err(RunError::OutputExists(paths.dir.clone()));
            }
            self.session()?;
            let library = Library::new(self.seed.clone());
            self.write_library(&library)?;
            let config_json =
                serde_json::to_string_pretty(&self.config).expect("config serializes");
            write_atomic(&paths.config(), &config_json).map_err(io_err(&paths.config()))?;
            let _ = fs::remove_file(paths.transcript());
            self.gateway
                .log_transcript_to(&paths.transcript())
                .map_err(io_err(&paths.transcript()))?;
            let log = EventLog::create(&paths.events(), Clock::new(self.config.clock))
                .map_err(io_err(&paths.events()))?;
            (library, log, 0)
        };

        let loops = self.config.loops() as usize;
        let mut completed = start_loop;
        for loop_index in start_loop..loops {
            let flow = match self.config.mode {
                RunMode::Cpl => self.cpl_loop(loop_index, &mut library, &mut log),
                RunMode::SimpleLoop => self.simple_loop(loop_index, &mut library, &mut log),
            };
            let flow = match flow {
                Ok(f) => f,
                Err(e) => {
                    let _ = log.emit(
                        EventKind::Warning,
                        json!({"loop": loop_index, "fatal": true, "message": e.to_string()}),
                    );
                    return Err(e);
                }
            };
            if let Flow::Halt = flow {
                return Ok(RunSummary {
                    status: RunStatus::Halted,
                    loops_completed: completed,
                    library_len: library.len(),
                    theorems_added: self.added,
                });
            }
            completed += 1;
        }
        log.emit(
            EventKind::RunComplete,
            json!({"loops": loops, "library_len": library.len(), "calls": self.gateway.call_counts()}),
        )
        .map_err(io_err(&paths.events()))?;
        drop(log);
        crate::eval::write_run_report(&paths.dir).map_err(|e| RunError::Io {
            path: paths.report(),
            source: io::Error::other(e.to_string()),
        })?;
        Ok(RunSummary {
            status: RunStatus::Complete,
            loops_completed: completed,
            library_len: library.len(),
            theorems_added: self.added,
        })
    }

    fn add_theorem(
        &mut self,
        loop_index: usize,
        stmt: TheoremStatement,
        proof: ProofScript,
        provenance: Provenance,
        library: &mut Library,
        log: &mut EventLog,
    ) -> Result<Flow, RunError> {
        let created_at = log.clock().now();
        let entry = library.append(stmt, proof, provenance, created_at).clone();
        self.write_library(library)?;
        log.emit(
            EventKind::TheoremAdded,
            json!({"loop": loop_index, "entry": entry}),
        )
        .map_err(io_err(&self.paths.events()))?;
        self.added += 1;
        Ok(if self.halt_after.is_some_and(|n| self.added >= n) {
            Flow::Halt
        } else {
            Flow::Continue
        })
    }

    fn checkpoint(&self, library: &Library, log: &mut EventLog) -> Checkpoint {
        Checkpoint {
            library_len: library.len(),
            calls: self.gateway.call_counts(),
            // The loop_complete event carrying this checkpoint takes one tick.
            clock_ticks: log.clock().ticks() + 1,
        }
    }

    fn cpl_loop(
        &mut self,
        loop_index: usize,
        library: &mut Library,
        log: &mut EventLog,
    ) -> Result<Flow, RunError> {
        let events_path = self.paths.events();
        log.emit(
            EventKind::PhaseStart,
            json!({"loop": loop_index, "phase": "conjecture", "library_len": library.len()}),
        )
        .map_err(io_err(&events_path))?;
        let settings = ConjectureSettings {
            iterations: self.config.conjecture_iterations,
            context_budget: self.config.context_budget,
            prompt: self.config.prompts.conjecturer.clone(),
            loop_index,
        };
        self.session()?;
        let session = self.session.as_mut().expect("session open");
        let report = run_conjecture_phase(library, session, &self.gateway, &settings, log)
            .map_err(|a| a.error)?;

        log.emit(
            EventKind::PhaseStart,
            json!({"loop": loop_index, "phase": "prove", "conjectures": report.accepted.len()}),
        )
        .map_err(io_err(&events_path))?;
        let mut prover = ProverSettings::new(
            crate::prover::PromptVariant::NotProvable,
            self.config.max_trials,
            self.config.context_budget,
        );
        prover.prompt = self.config.prompts.prover.clone();
        prover.tags.insert("loop".into(), json!(loop_index));

        // Theorems proved in this loop join the context from the next loop on.
        let snapshot = library.clone();
        let mut tally = [0usize; 3];
        for stmt in report.accepted.items() {
            let context = if self.config.refresh_context_within_loop {
                &*library
            } else {
                &snapshot
            };
            let session = self.session.as_mut().expect("session open");
            let outcome = prove(stmt, context, session, &self.gateway, &prover, log)?;
            tally[outcome.status as usize] += 1;
            if let (ProofStatus::Verified, Some(proof)) = (outcome.status, outcome.final_proof) {
                if let Flow::Halt = self.add_theorem(
                    loop_index,
                    stmt.clone(),
                    proof,
                    Provenance::Cpl,
                    library,
                    log,
                )? {
                    return Ok(Flow::Halt);
                }
            }
        }

        let checkpoint = self.checkpoint(library, log);
        log.emit(
            EventKind::LoopComplete,
            json!({
                "loop": loop_index,
                "library_len": library.len(),
                "conjecture_phase": report.summary(),
                "proofs": {
                    "verified": tally[ProofStatus::Verified as usize],
                    "failed_exhausted": tally[ProofStatus::FailedExhausted as usize],
                    "declared_unprovable": tally[ProofStatus::DeclaredUnprovable as usize],
                },
                "checkpoint": checkpoint,
            }),
        )
        .map_err(io_err(&events_path))?;
        Ok(Flow::Continue)
    }

    fn simple_loop(
        &mut self,
        loop_index: usize,
        library: &mut Library,
        log: &mut EventLog,
    ) -> Result<Flow, RunError> {
        let events_path = self.paths.events();
        log.emit(
            EventKind::PhaseStart,
            json!({"loop": loop_index, "phase": "simple_loop"}),
        )
        .map_err(io_err(&events_path))?;
        let context =
            render_context(library, &[], self.config.context_budget).map_err(EngineError::from)?;
        if let Some(w) = &context.warning {
            log.emit(
                EventKind::Warning,
                json!({"loop": loop_index, "message": w}),
            )
            .map_err(io_err(&events_path))?;
        }
        let prompt = self.config.prompts.simple_loop.clone();
        let mut previous: Option<(String, CheckResult)> = None;
        let mut verified = None;
        let mut trials = 0;

        for trial in 1..=self.config.max_trials {
            trials = trial;
            let user_content = match &previous {
                Some((decl, check)) => feedback_prompt(context.full(), decl, check),
                None => context.full().to_string(),
            };
            let request = ChatRequest {
                role: Role::SimpleLoop,
                system_prompt: prompt.system_prompt.clone(),
                user_content,
                sampling: prompt.sampling,
            };
            let (declaration, check, parsed) = match self.gateway.complete(&request) {
                Err(e) if e.is_fatal() => return Err(EngineError::from(e).into()),
                Err(e) => (
                    String::new(),
                    CheckResult::synthetic_failure(format!("model call failed: {e}")),
                    None,
                ),
                Ok(response) => {
                    let declaration = strip_code_fences(&response.text).text.trim().to_string();
                    self.check_declaration(declaration, context.dynamic_part())?
                }
            };
            log.emit(
                EventKind::ProofAttempt,
                json!({
                    "loop": loop_index,
                    "trial": trial,
                    "name": parsed.as_ref().map(|(s, _): &(TheoremStatement, ProofScript)| s.name().to_string()),
                    "declaration": declaration,
                    "verdict": check.verdict,
                    "diagnostics": check.diagnostics,
                }),
            )
            .map_err(io_err(&events_path))?;
            if check.verdict == Verdict::Verified {
                verified = parsed;
                break;
            }
            previous = Some((declaration, check));
        }

        let success = verified.is_some();
        if let Some((stmt, proof)) = verified {
            if let Flow::Halt = self.add_theorem(
                loop_index,
                stmt,
                proof,
                Provenance::SimpleLoop,
                library,
                log,
            )? {
                return Ok(Flow::Halt);
            }
        }
        let checkpoint = self.checkpoint(library, log);
        log.emit(
            EventKind::LoopComplete,
            json!({
                "loop": loop_index,
                "library_len": library.len(),
                "trials": trials,
                "verified": success,
                "checkpoint": checkpoint,
            }),
        )
        .map_err(io_err(&events_path))?;
        Ok(Flow::Continue)
    }

    /// Parse and verify a whole generated declaration.
    #[allow(clippy::type_complexity)]
    fn check_declaration(
        &mut self,
        declaration: String,
        context: &str,
    ) -> Result<(String, CheckResult, Option<(TheoremStatement, ProofScript)>), RunError> {
        if declaration.is_empty() {
            return Ok((
                declaration,
                CheckResult::synthetic_failure("empty response"),
                None,
            ));
        }
        let (stmt, proof_text) = match parse_full_declaration(&declaration) {
            Ok(p) => p,
            Err(e) => {
                return Ok((
                    declaration,
                    CheckResult::synthetic_failure(e.to_string()),
                    None,
                ))
            }
        };
        let proof = match ProofScript::new(proof_text) {
            Ok(p) => p,
            Err(e) => {
                return Ok((
                    declaration,
                    CheckResult::synthetic_failure(e.to_string()),
                    None,
                ))
            }
        };
        let session = self.session()?;
        let (check, _) = verify_with_retry(session, context, &stmt, &proof);
        Ok((declaration, check, Some((stmt, proof))))
    }
}
