use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cpl_core::eval::nl::{grade_response, nl_report, nl_session, NlCategory};
use cpl_core::eval::{
    emit_reports, histogram_csv, histogram_table, proof_length_histogram, report::ReportOptions,
    reprove_all, reprove_focused, ReproveMode, ReproveReport,
};
use cpl_core::events::{Clock, ClockMode, EventLog};
use cpl_core::gateway::Gateway;
use cpl_core::model::{parse_library_file, parse_theorem_declarations, LengthMetric, Library};
use cpl_core::orchestrator::{
    write_atomic, ProviderConfig, RunConfig, RunMode, RunStatus, Runner, VerifierConfig,
};
use cpl_core::prover::{PromptVariant, ProofStatus, ProverSettings};
use cpl_core::verifier::{LeanReplConfig, VerifierSession};

#[derive(Parser)]
#[command(
    name = "cpl",
    version,
    about = "Conjecture and prove Lean theorems with a language model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the conjecturing-proving loop or the single-agent baseline.
    Run(RunArgs),
    /// Re-prove every library entry, in order.
    ReproveAll(ReproveAllArgs),
    /// Prove one statement many times against a library prefix.
    ReproveFocused(ReproveFocusedArgs),
    /// Natural-language proof sessions and manual grading.
    #[command(subcommand)]
    Nl(NlCommand),
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cpl,
    SimpleLoop,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    System,
    Logical,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContextArg {
    WithContext,
    DefinitionsOnly,
}

impl From<ContextArg> for ReproveMode {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::WithContext => ReproveMode::WithContext,
            ContextArg::DefinitionsOnly => ReproveMode::DefinitionsOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    NotProvable,
    False,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Lines,
    Chars,
}

impl From<MetricArg> for LengthMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Lines => LengthMetric::Lines,
            MetricArg::Chars => LengthMetric::Chars,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    CorrectlyProven,
    Gap,
    RejectedAsFalse,
}

impl From<CategoryArg> for NlCategory {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::CorrectlyProven => NlCategory::CorrectlyProven,
            CategoryArg::Gap => NlCategory::Gap,
            CategoryArg::RejectedAsFalse => NlCategory::RejectedAsFalse,
        }
    }
}

/// Options shared by every command that talks to a model or the verifier.
#[derive(Args)]
struct Backends {
    /// TOML config; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record every model exchange into this directory.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Serve model responses from a record directory instead of the API.
    #[arg(long, conflicts_with = "dry_run")]
    replay: Option<PathBuf>,
    /// Use canned model responses; no network.
    #[arg(long)]
    dry_run: bool,
    /// Scripted verifier fixture file.
    #[arg(long, conflicts_with = "lean_repl")]
    fixtures: Option<PathBuf>,
    /// Lean REPL command line, e.g. "lake exe repl".
    #[arg(long)]
    lean_repl: Option<String>,
    /// Lean project directory for the REPL.
    #[arg(long, requires = "lean_repl")]
    lean_project: Option<PathBuf>,
    #[arg(long, value_enum)]
    clock: Option<ClockArg>,
    #[arg(long)]
    max_trials: Option<u32>,
    #[arg(long)]
    context_budget: Option<usize>,
}

impl Backends {
    fn load(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.record {
            c.record_dir = Some(d.clone());
        }
        if let Some(d) = &self.replay {
            c.provider = ProviderConfig::Replay { dir: d.clone() };
        }
        if self.dry_run {
            c.provider = ProviderConfig::DryRun;
        }
        if let Some(f) = &self.fixtures {
            c.verifier = VerifierConfig::Scripted {
                fixtures: Some(f.clone()),
            };
        }
        if let Some(cmd) = &self.lean_repl {
            let command: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if command.is_empty() {
                bail!("--lean-repl needs a command");
            }
            c.verifier = VerifierConfig::LeanRepl(LeanReplConfig {
                command,
                working_dir: self.lean_project.clone(),
                ..LeanReplConfig::default()
            });
        }
        if let Some(clock) = self.clock {
            c.clock = match clock {
                ClockArg::System => ClockMode::System,
                ClockArg::Logical => ClockMode::Logical,
            };
        }
        if let Some(n) = self.max_trials {
            c.max_trials = n;
        }
        if let Some(n) = self.context_budget {
            c.context_budget = n;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    backends: Backends,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Lean file with the seed definitions.
    #[arg(long)]
    seed: Option<PathBuf>,
    #[arg(long)]
    loops: Option<u32>,
    /// Conjecture iterations per loop.
    #[arg(long)]
    iterations: Option<u32>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue the run in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReproveAllArgs {
    #[command(flatten)]
    backends: Backends,
    /// library.lean, or a run directory containing one.
    #[arg(long)]
    library: PathBuf,
    #[arg(long, value_enum, default_value = "with-context")]
    mode: ContextArg,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReproveFocusedArgs {
    #[command(flatten)]
    backends: Backends,
    /// File holding the target `theorem ... := sorry`.
    #[arg(long)]
    statement: PathBuf,
    #[arg(long)]
    library: PathBuf,
    /// Number of independent attempts.
    #[arg(long)]
    n: Option<u32>,
    /// Library entries visible to the prover.
    #[arg(long)]
    prefix: Option<usize>,
    #[arg(long, value_enum, default_value = "with-context")]
    mode: ContextArg,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum NlCommand {
    /// Collect natural-language proofs for grading.
    Run {
        #[command(flatten)]
        backends: Backends,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<u32>,
        /// Lean file with the definitions shown to the model; defaults to the seed.
        #[arg(long)]
        definitions: Option<PathBuf>,
        /// Text file with the statement to prove.
        #[arg(long)]
        statement: Option<PathBuf>,
    },
    /// Grade one response. Grading again supersedes the earlier grade.
    Grade {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        response: String,
        #[arg(long, value_enum)]
        category: CategoryArg,
        #[arg(long)]
        grader: String,
        #[arg(long, default_value = "")]
        note: String,
    },
    /// Category breakdown over fetched responses.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Fail if any response is still ungraded.
        #[arg(long)]
        finalize: bool,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Proof-length histogram of a library.
    Histogram {
        #[arg(long)]
        library: PathBuf,
        #[arg(long, default_value_t = 10)]
        bin: usize,
        #[arg(long, value_enum, default_value = "lines")]
        metric: MetricArg,
        /// Print CSV instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Recompute report.json, report.txt and histogram.csv from a directory's logs.
    Report {
        dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        bin: usize,
        #[arg(long, value_enum, default_value = "lines")]
        metric: MetricArg,
    },
}

fn library_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("library.lean")
    } else {
        p.to_path_buf()
    }
}

fn load_library(p: &Path) -> Result<Library> {
    let path = library_path(p);
    let text =
        fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_library_file(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn variant(arg: Option<VariantArg>, config: &RunConfig) -> PromptVariant {
    match arg {
        Some(VariantArg::NotProvable) => PromptVariant::NotProvable,
        Some(VariantArg::False) => PromptVariant::False,
        None => config.eval.reprove_variant,
    }
}

/// Gateway, verifier session and event log for an evaluation campaign
/// writing into `out`.
struct Campaign {
    gateway: Gateway,
    session: VerifierSession,
    log: EventLog,
}

fn open_campaign(config: &RunConfig, seed: &str, out: &Path) -> Result<Campaign> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut gateway = config.build_gateway()?;
    gateway
        .log_transcript_to(&out.join("transcript.jsonl"))
        .context("cannot open transcript")?;
    let session = VerifierSession::open(config.build_verifier()?, seed, config.timeouts)?;
    let events = out.join("events.jsonl");
    let mut log = EventLog::open_or_create(&events, Clock::new(config.clock))
        .with_context(|| format!("cannot open {}", events.display()))?;
    let next = log.next_sequence();
    log.clock().set_ticks(next);
    Ok(Campaign {
        gateway,
        session,
        log,
    })
}

fn prover_settings(config: &RunConfig, v: PromptVariant) -> ProverSettings {
    ProverSettings {
        prompt: config.prompts.prover_for(v).clone(),
        ..ProverSettings::new(v, config.max_trials, config.context_budget)
    }
}

fn finish_campaign(out: &Path, report: &ReproveReport, config: &RunConfig) -> Result<()> {
    let path = out.join(format!("{}.json", report.campaign));
    write_atomic(&path, &serde_json::to_string_pretty(report)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    println!(
        "{}: {} verified, {} failed, {} declared unprovable; success {}",
        report.campaign,
        report.breakdown.verified,
        report.breakdown.failed_exhausted,
        report.breakdown.declared_unprovable,
        report.success_rate
    );
    let declared: Vec<usize> = report
        .per_theorem
        .iter()
        .filter(|r| r.status == ProofStatus::DeclaredUnprovable)
        .map(|r| r.index)
        .collect();
    if !declared.is_empty() {
        println!("declared unprovable: {declared:?}");
    }
    if !report.flagged.is_empty() {
        println!(
            "lost trials to verifier transport failures: {:?}",
            report.flagged
        );
    }
    let options = ReportOptions {
        bin_width: config.eval.histogram_bin,
        metric: config.eval.length_metric,
    };
    emit_reports(out, options)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut c = args.backends.load()?;
    if let Some(m) = args.mode {
        c.mode = match m {
            ModeArg::Cpl => RunMode::Cpl,
            ModeArg::SimpleLoop => RunMode::SimpleLoop,
        };
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(n) = args.loops {
        c.loops = Some(n);
    }
    if let Some(n) = args.iterations {
        c.conjecture_iterations = n;
    }
    if let Some(o) = args.out {
        c.output_dir = o;
    }
    if args.resume {
        c.resume = true;
    }
    let mut runner = Runner::from_config(c)?;
    let summary = runner.run()?;
    println!("{}", serde_json::to_string(&summary)?);
    match summary.status {
        RunStatus::AlreadyComplete => println!("run already complete; nothing to do"),
        _ => println!("report written to {}", runner.paths().report().display()),
    }
    Ok(ExitCode::SUCCESS)
}

fn reprove_all_cmd(args: ReproveAllArgs) -> Result<ExitCode> {
    let config = args.backends.load()?;
    config.validate()?;
    let library = load_library(&args.library)?;
    let mut camp = open_campaign(&config, library.seed_source(), &args.out)?;
    let settings = prover_settings(&config, variant(args.variant, &config));
    let report = reprove_all(
        &library,
        args.mode.into(),
        &mut camp.session,
        &camp.gateway,
        &settings,
        &mut camp.log,
    )?;
    finish_campaign(&args.out, &report, &config)?;
    Ok(ExitCode::SUCCESS)
}

fn reprove_focused_cmd(args: ReproveFocusedArgs) -> Result<ExitCode> {
    let config = args.backends.load()?;
    config.validate()?;
    let library = load_library(&args.library)?;
    let text = fs::read_to_string(&args.statement)
        .with_context(|| format!("cannot read {}", args.statement.display()))?;
    let parsed = parse_theorem_declarations(&text);
    let stmt = parsed.statements.into_iter().next().ok_or_else(|| {
        anyhow!(
            "{} holds no `theorem ... := sorry` declaration",
            args.statement.display()
        )
    })?;
    let prefix = args.prefix.unwrap_or(config.eval.focused_prefix);
    if prefix > library.len() {
        bail!(
            "prefix {prefix} exceeds the library's {} entries",
            library.len()
        );
    }
    let n = args.n.unwrap_or(config.eval.focused_runs);
    let mut camp = open_campaign(&config, library.seed_source(), &args.out)?;
    let settings = prover_settings(&config, variant(args.variant, &config));
    let report = reprove_focused(
        &stmt,
        &library.prefix(prefix),
        n,
        args.mode.into(),
        &mut camp.session,
        &camp.gateway,
        &settings,
        &mut camp.log,
    )?;
    finish_campaign(&args.out, &report, &config)?;
    Ok(ExitCode::SUCCESS)
}

fn nl_cmd(cmd: NlCommand) -> Result<ExitCode> {
    match cmd {
        NlCommand::Run {
            backends,
            out,
            n,
            definitions,
            statement,
        } => {
            let config = backends.load()?;
            let defs_path = definitions.unwrap_or_else(|| config.seed.clone());
            let defs = fs::read_to_string(&defs_path)
                .with_context(|| format!("cannot read {}", defs_path.display()))?;
            let statement = match statement {
                Some(p) => fs::read_to_string(&p)
                    .with_context(|| format!("cannot read {}", p.display()))?,
                None => config.eval.nl_statement.clone(),
            };
            fs::create_dir_all(&out)?;
            let mut gateway = config.build_gateway()?;
            gateway.log_transcript_to(&out.join("transcript.jsonl"))?;
            let mut clock = Clock::new(config.clock);
            let responses = nl_session(
                &out,
                &defs,
                statement.trim(),
                n.unwrap_or(config.eval.nl_runs),
                &config.prompts.nl_prover,
                &gateway,
                &mut || clock.now(),
            )?;
            let failed = responses.iter().filter(|r| r.file.is_none()).count();
            println!(
                "{} responses stored in {}",
                responses.len() - failed,
                out.join("nl_responses").display()
            );
            if failed > 0 {
                println!("{failed} requests failed and are excluded from grading");
            }
        }
        NlCommand::Grade {
            out,
            response,
            category,
            grader,
            note,
        } => {
            let g = grade_response(
                &out,
                &response,
                category.into(),
                &grader,
                &note,
                chrono::Utc::now(),
            )?;
            println!("{} graded {}", g.response_id, g.category.as_str());
        }
        NlCommand::Report { out, finalize } => {
            let r = nl_report(&out, finalize)?;
            for c in NlCategory::ALL {
                println!("{:<20} {}", c.as_str(), r.rates[&c]);
            }
            if !r.pending.is_empty() {
                println!("pending: {}", r.pending.join(", "));
            }
            if !r.failed_fetch.is_empty() {
                println!("failed fetch: {}", r.failed_fetch.join(", "));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze_cmd(cmd: AnalyzeCommand) -> Result<ExitCode> {
    match cmd {
        AnalyzeCommand::Histogram {
            library,
            bin,
            metric,
            csv,
        } => {
            if bin == 0 {
                bail!("--bin must be positive");
            }
            let library = load_library(&library)?;
            let bins = proof_length_histogram(&library, bin, metric.into());
            if csv {
                print!("{}", histogram_csv(&bins, bin));
            } else {
                print!("{}", histogram_table(&bins, bin));
            }
        }
        AnalyzeCommand::Report { dir, bin, metric } => {
            if bin == 0 {
                bail!("--bin must be positive");
            }
            emit_reports(
                &dir,
                ReportOptions {
                    bin_width: bin,
                    metric: metric.into(),
                },
            )?;
            print!("{}", fs::read_to_string(dir.join("report.txt"))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::ReproveAll(a) => reprove_all_cmd(a),
        Command::ReproveFocused(a) => reprove_focused_cmd(a),
        Command::Nl(c) => nl_cmd(c),
        Command::Analyze(c) => analyze_cmd(c),
        Command::DefaultConfig => toml::to_string_pretty(&RunConfig::default())
            .map(|s| {
                print!("{s}");
                ExitCode::SUCCESS
            })
            .map_err(Into::into),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
