use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::events::ClockMode;
use crate::gateway::{
    prompts, ChatProvider, DryRunProvider, Gateway, RateLimiter, Recorder, RemoteProvider,
    ReplayProvider, RetryPolicy, Role,
};
use crate::model::LengthMetric;
use crate::prover::PromptVariant;
use crate::verifier::{
    LeanRepl, LeanReplConfig, ScriptedFixtures, ScriptedVerifier, Timeouts, VerifierBackend,
};
use crate::RolePrompt;

pub const DEFAULT_CPL_LOOPS: u32 = 30;
pub const DEFAULT_SIMPLE_LOOPS: u32 = 400;
pub const DEFAULT_CONTEXT_BUDGET: usize = 400_000;
pub const DEFAULT_FOCUSED_RUNS: u32 = 128;
pub const DEFAULT_FOCUSED_PREFIX: usize = 49;
pub const DEFAULT_NL_RUNS: u32 = 16;
pub const API_KEY_ENV: &str = "CPL_API_KEY";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Cpl,
    SimpleLoop,
}

impl RunMode {
    pub fn default_loops(self) -> u32 {
        match self {
            RunMode::Cpl => DEFAULT_CPL_LOOPS,
            RunMode::SimpleLoop => DEFAULT_SIMPLE_LOOPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Remote {
        endpoint: String,
        /// Model per role; roles without an entry use `default_model`.
        #[serde(default)]
        models: std::collections::BTreeMap<Role, String>,
        default_model: String,
        /// Environment variable holding the API key.
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_request_timeout")]
        request_timeout_secs: u64,
        #[serde(default = "default_rate")]
        requests_per_second: f64,
        #[serde(default = "default_burst")]
        burst: u32,
    },
    Replay {
        dir: PathBuf,
    },
    #[default]
    DryRun,
}

fn default_key_env() -> String {
    API_KEY_ENV.to_string()
}
fn default_request_timeout() -> u64 {
    600
}
fn default_rate() -> f64 {
    1.0
}
fn default_burst() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum VerifierConfig {
    /// Fixture-driven stand-in for Lean; without fixtures every statement
    /// is valid and novel and every proof fails.
    Scripted {
        #[serde(default)]
        fixtures: Option<PathBuf>,
    },
    LeanRepl(LeanReplConfig),
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig::Scripted { fixtures: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prompts {
    pub conjecturer: RolePrompt,
    pub prover: RolePrompt,
    pub prover_false: RolePrompt,
    pub simple_loop: RolePrompt,
    pub nl_prover: RolePrompt,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            conjecturer: RolePrompt::new(prompts::CONJECTURER),
            prover: RolePrompt::new(prompts::PROVER),
            prover_false: RolePrompt::new(prompts::PROVER_FALSE_VARIANT),
            simple_loop: RolePrompt::new(prompts::SIMPLE_LOOP),
            nl_prover: RolePrompt::new(prompts::NL_PROVER),
        }
    }
}

impl Prompts {
    pub fn prover_for(&self, variant: PromptVariant) -> &RolePrompt {
        match variant {
            PromptVariant::NotProvable => &self.prover,
            PromptVariant::False => &self.prover_false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Prompt variant for re-proving the whole library.
    pub reprove_variant: PromptVariant,
    pub focused_runs: u32,
    pub focused_prefix: usize,
    pub nl_runs: u32,
    pub nl_statement: String,
    pub histogram_bin: usize,
    pub length_metric: LengthMetric,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reprove_variant: PromptVariant::NotProvable,
            focused_runs: DEFAULT_FOCUSED_RUNS,
            focused_prefix: DEFAULT_FOCUSED_PREFIX,
            nl_runs: DEFAULT_NL_RUNS,
            nl_statement: prompts::NL_ALPHA_OPEN_STATEMENT.to_string(),
            histogram_bin: 10,
            length_metric: LengthMetric::Lines,
        }
    }
}

/// Everything a run needs. Loaded from TOML; relative paths are resolved
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub seed: PathBuf,
    /// Defaults to 30 for `cpl` and 400 for `simple_loop`.
    pub loops: Option<u32>,
    pub conjecture_iterations: u32,
    pub max_trials: u32,
    pub context_budget: usize,
    pub output_dir: PathBuf,
    pub resume: bool,
    pub clock: ClockMode,
    /// Put theorems proved earlier in a loop into the context of later
    /// conjectures of the same loop.
    pub refresh_context_within_loop: bool,
    pub provider: ProviderConfig,
    pub record_dir: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub verifier: VerifierConfig,
    pub timeouts: Timeouts,
    pub prompts: Prompts,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Cpl,
            seed: PathBuf::from("seed.lean"),
            loops: None,
            conjecture_iterations: crate::conjecture::DEFAULT_ITERATIONS,
            max_trials: crate::prover::DEFAULT_MAX_TRIALS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            output_dir: PathBuf::from("runs/latest"),
            resume: false,
            clock: ClockMode::System,
            refresh_context_within_loop: false,
            provider: ProviderConfig::default(),
            record_dir: None,
            retry: RetryPolicy::default(),
            verifier: VerifierConfig::default(),
            timeouts: Timeouts::default(),
            prompts: Prompts::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("environment variable {0} is not set; it must hold the chat API key")]
    MissingApiKey(String),
    #[error("record directory {path} is not writable: {source}")]
    RecordDir {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.seed);
        resolve(base, &mut self.output_dir);
        if let Some(d) = &mut self.record_dir {
            resolve(base, d);
        }
        if let ProviderConfig::Replay { dir } = &mut self.provider {
            resolve(base, dir);
        }
        match &mut self.verifier {
            VerifierConfig::Scripted { fixtures: Some(f) } => resolve(base, f),
            VerifierConfig::LeanRepl(LeanReplConfig {
                working_dir: Some(d),
                ..
            }) => resolve(base, d),
            _ => {}
        }
    }

    pub fn loops(&self) -> u32 {
        self.loops.unwrap_or_else(|| self.mode.default_loops())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("loops", self.loops()),
            ("conjecture_iterations", self.conjecture_iterations),
            ("max_trials", self.max_trials),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.context_budget == 0 {
            return Err(ConfigError::Invalid(
                "context_budget must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut gateway = Gateway::new(self.retry);
        match &self.provider {
            ProviderConfig::DryRun => {
                let p: Arc<dyn ChatProvider> = Arc::new(DryRunProvider);
                for role in Role::ALL {
                    gateway.set_provider(role, p.clone());
                }
            }
            ProviderConfig::Replay { dir } => {
                let p = ReplayProvider::load(dir).map_err(|source| ConfigError::Read {
                    path: dir.clone(),
                    source,
                })?;
                let p: Arc<dyn ChatProvider> = Arc::new(p);
                for role in Role::ALL {
                    gateway.set_provider(role, p.clone());
                }
            }
            ProviderConfig::Remote {
                endpoint,
                models,
                default_model,
                api_key_env,
                request_timeout_secs,
                requests_per_second,
                burst,
            } => {
                let key = std::env::var(api_key_env)
                    .ok()
                    .filter(|k| !k.is_empty())
                    .ok_or_else(|| ConfigError::MissingApiKey(api_key_env.clone()))?;
                for role in Role::ALL {
                    let model = models.get(&role).unwrap_or(default_model);
                    let p = RemoteProvider::new(
                        endpoint,
                        model,
                        key.clone(),
                        Duration::from_secs(*request_timeout_secs),
                        RateLimiter::new(*requests_per_second, *burst),
                    )
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    gateway.set_provider(role, Arc::new(p));
                }
            }
        }
        if let Some(dir) = &self.record_dir {
            let recorder = Recorder::create(dir).map_err(|source| ConfigError::RecordDir {
                path: dir.clone(),
                source,
            })?;
            gateway.record_to(recorder);
        }
        Ok(gateway)
    }

    pub fn build_verifier(&self) -> Result<Box<dyn VerifierBackend>, ConfigError> {
        Ok(match &self.verifier {
            VerifierConfig::Scripted { fixtures } => {
                let fixtures = match fixtures {
                    Some(path) => {
                        ScriptedFixtures::load(path).map_err(|source| ConfigError::Read {
                            path: path.clone(),
                            source,
                        })?
                    }
                    None => ScriptedFixtures::default(),
                };
                Box::new(ScriptedVerifier::new(fixtures))
            }
            VerifierConfig::LeanRepl(c) => Box::new(LeanRepl::new(c.clone())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol_constants() {
        let c = RunConfig::default();
        assert_eq!(c.loops(), 30);
        assert_eq!(
            RunConfig {
                mode: RunMode::SimpleLoop,
                ..c.clone()
            }
            .loops(),
            400
        );
        assert_eq!(c.conjecture_iterations, 16);
        assert_eq!(c.max_trials, 16);
        assert_eq!(c.eval.focused_runs, 128);
        assert_eq!(c.eval.focused_prefix, 49);
        assert_eq!(c.eval.nl_runs, 16);
        assert_eq!(c.eval.histogram_bin, 10);
        assert!(!c.refresh_context_within_loop);
    }

    #[test]
    fn toml_round_trip_and_path_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
mode = "simple_loop"
seed = "seed.lean"
loops = 3
clock = "logical"
output_dir = "out"

[provider]
kind = "replay"
dir = "responses"

[verifier]
backend = "scripted"
fixtures = "verifier.json"

[prompts.prover]
system_prompt = "custom"
sampling = { temperature = 0.2 }
"#,
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.mode, RunMode::SimpleLoop);
        assert_eq!(c.loops(), 3);
        assert_eq!(c.seed, dir.path().join("seed.lean"));
        assert_eq!(
            c.provider,
            ProviderConfig::Replay {
                dir: dir.path().join("responses")
            }
        );
        assert_eq!(c.prompts.prover.system_prompt, "custom");
        assert_eq!(c.prompts.prover.sampling.temperature, 0.2);
        assert_eq!(c.prompts.conjecturer.system_prompt, prompts::CONJECTURER);
        assert_eq!(c.timeouts, Timeouts::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "loopz = 3\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn remote_provider_needs_key() {
        let c = RunConfig {
            provider: ProviderConfig::Remote {
                endpoint: "http://localhost:1".into(),
                models: Default::default(),
                default_model: "m".into(),
                api_key_env: "CPL_TEST_KEY_THAT_IS_NOT_SET".into(),
                request_timeout_secs: 1,
                requests_per_second: 1.0,
                burst: 1,
            },
            ..Default::default()
        };
        let err = c.build_gateway().unwrap_err();
        assert!(err.to_string().contains("CPL_TEST_KEY_THAT_IS_NOT_SET"));
    }
}
