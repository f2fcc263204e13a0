//! `expnote` command line: generate data, train, test, evaluate and report.
//!
//! Exit codes: 0 success, 1 backend or i/o failure, 2 usage error, 3 format error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{
    self, AgentError, ExperimentOptions, Trajectory, Variant, VariantConfig, DEFAULT_K,
    DEFAULT_MAX_TURNS, DEFAULT_N_TRAIN,
};
use crate::backends::{
    Backend, BackendError, CassetteBackend, LiveBackend, LiveConfig, RecordingBackend,
    ScriptedBackend,
};
use crate::datasets::{self, DatasetError, TaskInstance, Vocabulary};
use crate::evaluation::{self, EvalError, RunReport};
use crate::memory::{MemoryError, MemoryStore};
use crate::protocol::{PromptBundle, ProtocolError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
            CliError::Backend(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            DatasetError::InvalidRatio(_) | DatasetError::ZeroCount => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<MemoryError> for CliError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Io { .. } => CliError::Io(e.to_string()),
            BackendError::Format { .. } => CliError::Format(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Format(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Backend(b) => b.into(),
            AgentError::Protocol(p) => p.into(),
            AgentError::Memory(m) => m.into(),
            AgentError::OverlappingIds(_) | AgentError::InvalidConfig(_) => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "expnote",
    version,
    about = "Reflect, note and recall task experiences for black-box LLMs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a LETS letter-splicing task file.
    GenData(GenDataArgs),
    /// Split a task file into train/test files with a seeded shuffle.
    Split(SplitArgs),
    /// Training pass: answer, receive feedback, note experiences.
    Train(RunArgs),
    /// Testing pass: auto-recall experiences and answer.
    Test(RunArgs),
    /// Training then testing in one process, optionally emitting a training curve.
    Run(RunArgs),
    /// Improvement analysis between a baseline report and a treated report.
    Eval(EvalArgs),
    /// Variant and efficiency tables over several reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// One word per line; defaults to the bundled 100-word list.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub train_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
    Cassette,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task file. For `run`, this is the training file.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Test task file (`run` only).
    #[arg(long)]
    pub test_tasks: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Script file for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Cassette to replay (cassette backend) or record into (live backend).
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Memory file: written by `train`/`run`, read by `test`.
    #[arg(long)]
    pub memory: Option<PathBuf>,
    /// Prompt bundle: `lets`, `generic`, or a path to a bundle file.
    #[arg(long)]
    pub prompts: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// `run` only: evaluate the test set after every N training samples.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with the same keys as these flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub treated: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file schema; every key optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub tasks: Option<PathBuf>,
    pub test_tasks: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub k: Option<usize>,
    pub n_train: Option<usize>,
    pub max_turns: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    pub memory: Option<PathBuf>,
    pub prompts: Option<String>,
    pub model: Option<String>,
    pub jobs: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub out: Option<PathBuf>,
    pub live: Option<LiveConfig>,
}

/// Fully resolved settings for one run; recorded verbatim in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub tasks: Option<PathBuf>,
    pub test_tasks: Option<PathBuf>,
    pub variant: Variant,
    pub k: usize,
    pub n_train: usize,
    pub max_turns: usize,
    pub seed: u64,
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    pub memory: Option<PathBuf>,
    pub prompts: String,
    pub model: String,
    pub jobs: usize,
    pub checkpoint_every: Option<usize>,
    pub live: Option<LiveConfig>,
    #[serde(skip)]
    pub out: PathBuf,
}

impl Settings {
    fn resolve(args: RunArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io(path))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let backend = args.backend.or(file.backend).ok_or_else(|| {
            CliError::Usage("--backend is required (live, scripted or cassette)".into())
        })?;
        let live = match backend {
            BackendKind::Live => Some(file.live.unwrap_or_default()),
            _ => None,
        };
        let model = args
            .model
            .or(file.model)
            .or_else(|| live.as_ref().map(|l| l.model_name.clone()))
            .unwrap_or_else(|| VariantConfig::default().model_name);
        let out = args
            .out
            .or(file.out)
            .ok_or_else(|| CliError::Usage("--out is required".into()))?;
        Ok(Settings {
            tasks: args.tasks.or(file.tasks),
            test_tasks: args.test_tasks.or(file.test_tasks),
            variant: args.variant.or(file.variant).unwrap_or(Variant::Full),
            k: args.k.or(file.k).unwrap_or(DEFAULT_K),
            n_train: args.n_train.or(file.n_train).unwrap_or(DEFAULT_N_TRAIN),
            max_turns: args
                .max_turns
                .or(file.max_turns)
                .unwrap_or(DEFAULT_MAX_TURNS),
            seed: args.seed.or(file.seed).unwrap_or(0),
            backend,
            script: args.script.or(file.script),
            cassette: args.cassette.or(file.cassette),
            memory: args.memory.or(file.memory),
            prompts: args
                .prompts
                .or(file.prompts)
                .unwrap_or_else(|| "generic".into()),
            model,
            jobs: args.jobs.or(file.jobs).unwrap_or(1).max(1),
            checkpoint_every: args.checkpoint_every.or(file.checkpoint_every),
            live,
            out,
        })
    }

    fn variant_config(&self) -> Result<VariantConfig, CliError> {
        let cfg = VariantConfig {
            variant: self.variant,
            k: self.k,
            n_train: self.n_train,
            max_turns: self.max_turns,
            model_name: self.model.clone(),
            ..VariantConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn bundle(&self) -> Result<(PromptBundle, Option<PathBuf>), CliError> {
        match PromptBundle::builtin(&self.prompts) {
            Some(b) => Ok((b, None)),
            None => {
                let path = PathBuf::from(&self.prompts);
                if !path.exists() {
                    return Err(CliError::Usage(format!(
                        "--prompts {:?} is neither a bundled name (lets, generic) nor an existing file",
                        self.prompts
                    )));
                }
                Ok((PromptBundle::load(&path)?, Some(path)))
            }
        }
    }

    fn memory_path(&self) -> PathBuf {
        self.memory
            .clone()
            .unwrap_or_else(|| self.out.join("memory.jsonl"))
    }

    /// Backend plus the input files it reads.
    fn backend(&self) -> Result<(Box<dyn Backend>, Vec<PathBuf>), CliError> {
        match self.backend {
            BackendKind::Scripted => {
                let path = self.script.clone().ok_or_else(|| {
                    CliError::Usage("--script is required for the scripted backend".into())
                })?;
                require_exists(&path)?;
                Ok((Box::new(ScriptedBackend::load(&path)?), vec![path]))
            }
            BackendKind::Cassette => {
                let path = self.cassette.clone().ok_or_else(|| {
                    CliError::Usage("--cassette is required for the cassette backend".into())
                })?;
                require_exists(&path)?;
                Ok((Box::new(CassetteBackend::load(&path)?), vec![path]))
            }
            BackendKind::Live => {
                let mut cfg = self.live.clone().unwrap_or_default();
                cfg.model_name = self.model.clone();
                let cassette = self
                    .cassette
                    .clone()
                    .unwrap_or_else(|| self.out.join("cassette.jsonl"));
                let live = LiveBackend::new(cfg);
                Ok((Box::new(RecordingBackend::new(live, cassette)?), Vec::new()))
            }
        }
    }
}

fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{} does not exist",
            path.display()
        )))
    }
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    subcommand: &'a str,
    seed: u64,
    config: &'a C,
    inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    outputs: Vec<FileDigest>,
}

fn digests(paths: &[PathBuf], base: Option<&Path>) -> Result<Vec<FileDigest>, CliError> {
    paths
        .iter()
        .map(|p| {
            let shown = base
                .and_then(|b| p.strip_prefix(b).ok())
                .unwrap_or(p)
                .display()
                .to_string();
            Ok(FileDigest {
                path: shown,
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn write_manifest<C: Serialize>(
    out: &Path,
    subcommand: &str,
    seed: u64,
    config: &C,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let manifest = Manifest {
        subcommand,
        seed,
        config,
        inputs: digests(inputs, None)?,
        outputs: digests(outputs, Some(out))?,
    };
    let path = out.join(format!("{subcommand}.manifest.json"));
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io(&path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io(path))
}

fn write_trajectories(path: &Path, log: &[Trajectory]) -> Result<(), CliError> {
    datasets::write_jsonl(path, log).map_err(CliError::from)
}

fn write_report(path: &Path, report: &RunReport) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn read_report(path: &Path) -> Result<RunReport, CliError> {
    require_exists(path)?;
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn load_tasks_arg(
    path: Option<&PathBuf>,
    flag: &str,
) -> Result<(Vec<TaskInstance>, PathBuf), CliError> {
    let path = path
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("{flag} is required")))?;
    require_exists(&path)?;
    Ok((datasets::load_tasks(&path)?, path))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io(path))
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let vocab = match &args.vocab {
        Some(p) => {
            require_exists(p)?;
            Vocabulary::parse(&fs::read_to_string(p).map_err(io(p))?)?
        }
        None => Vocabulary::builtin(),
    };
    let instances = datasets::gen_lets(args.count as usize, args.seed, &vocab)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    datasets::write_jsonl(&args.out, &instances)?;
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    require_exists(&args.tasks)?;
    let tasks = datasets::load_tasks(&args.tasks)?;
    let (train, test) = datasets::split(&tasks, args.train_ratio, args.seed)?;
    ensure_dir(&args.out)?;
    let train_path = args.out.join("train.jsonl");
    let test_path = args.out.join("test.jsonl");
    datasets::write_jsonl(&train_path, &train)?;
    datasets::write_jsonl(&test_path, &test)?;
    #[derive(Serialize)]
    struct SplitConfig {
        train_ratio: f64,
    }
    write_manifest(
        &args.out,
        "split",
        args.seed,
        &SplitConfig {
            train_ratio: args.train_ratio,
        },
        std::slice::from_ref(&args.tasks),
        &[train_path, test_path],
    )
}

fn cmd_train(settings: Settings) -> Result<(), CliError> {
    let (train, tasks_path) = load_tasks_arg(settings.tasks.as_ref(), "--tasks")?;
    let config = settings.variant_config()?;
    let (bundle, bundle_path) = settings.bundle()?;
    let (backend, mut inputs) = settings.backend()?;
    inputs.insert(0, tasks_path);
    inputs.extend(bundle_path);
    ensure_dir(&settings.out)?;

    let memory_path = settings.memory_path();
    write_text(&memory_path, "")?;
    let mut memory = MemoryStore::new();
    let train = if config.variant == Variant::Disabled {
        &[][..]
    } else {
        &train[..]
    };
    let log_path = settings.out.join("train_trajectories.jsonl");
    let result = agent::run_train_pass(
        train,
        &mut memory,
        &*backend,
        &bundle,
        &config,
        Some(&memory_path),
    );
    let (log, failure) = match result {
        Ok(log) => (log, None),
        Err(f) => (f.completed, Some(f.error)),
    };
    write_trajectories(&log_path, &log)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    write_manifest(
        &settings.out,
        "train",
        settings.seed,
        &settings,
        &inputs,
        &[memory_path, log_path],
    )?;
    println!(
        "trained on {} case(s); {} experience(s) noted",
        log.len(),
        memory.store_count()
    );
    Ok(())
}

fn load_memory_for(
    settings: &Settings,
    inputs: &mut Vec<PathBuf>,
) -> Result<MemoryStore, CliError> {
    if settings.variant == Variant::Disabled {
        return Ok(MemoryStore::new());
    }
    let path = settings
        .memory
        .clone()
        .ok_or_else(|| CliError::Usage("--memory is required unless --variant disabled".into()))?;
    require_exists(&path)?;
    let memory = MemoryStore::load(&path)?;
    inputs.push(path);
    Ok(memory)
}

fn write_run_outputs(
    out: &Path,
    report: &RunReport,
    test_log: &[Trajectory],
) -> Result<Vec<PathBuf>, CliError> {
    let report_path = out.join("report.json");
    let log_path = out.join("test_trajectories.jsonl");
    let rows = evaluation::variant_rows(std::slice::from_ref(report))?;
    let tsv_path = out.join("report.tsv");
    let txt_path = out.join("report.txt");
    write_report(&report_path, report)?;
    write_trajectories(&log_path, test_log)?;
    write_text(&tsv_path, &evaluation::render_tsv(&rows))?;
    write_text(&txt_path, &evaluation::render_aligned(&rows))?;
    Ok(vec![report_path, log_path, tsv_path, txt_path])
}

fn cmd_test(settings: Settings) -> Result<(), CliError> {
    let (test, tasks_path) = load_tasks_arg(settings.tasks.as_ref(), "--tasks")?;
    let config = settings.variant_config()?;
    let (bundle, bundle_path) = settings.bundle()?;
    let mut inputs = vec![tasks_path];
    let memory = load_memory_for(&settings, &mut inputs)?;
    let (backend, backend_inputs) = settings.backend()?;
    inputs.extend(backend_inputs);
    inputs.extend(bundle_path);
    ensure_dir(&settings.out)?;

    let (report, log) =
        match agent::run_test_pass(&test, &memory, &*backend, &bundle, &config, settings.jobs) {
            Ok(r) => r,
            Err(f) => {
                write_trajectories(&settings.out.join("test_trajectories.jsonl"), &f.completed)?;
                return Err(f.error.into());
            }
        };
    let outputs = write_run_outputs(&settings.out, &report, &log)?;
    write_manifest(
        &settings.out,
        "test",
        settings.seed,
        &settings,
        &inputs,
        &outputs,
    )?;
    print!(
        "{}",
        evaluation::render_aligned(&evaluation::variant_rows(&[report])?)
    );
    Ok(())
}

fn cmd_run(settings: Settings) -> Result<(), CliError> {
    let (train, train_path) = load_tasks_arg(settings.tasks.as_ref(), "--tasks")?;
    let (test, test_path) = load_tasks_arg(settings.test_tasks.as_ref(), "--test-tasks")?;
    let config = settings.variant_config()?;
    let (bundle, bundle_path) = settings.bundle()?;
    let (backend, mut inputs) = settings.backend()?;
    inputs.splice(0..0, [train_path, test_path]);
    inputs.extend(bundle_path);
    ensure_dir(&settings.out)?;

    let memory_path = settings.memory_path();
    write_text(&memory_path, "")?;
    let mut memory = MemoryStore::new();
    let options = ExperimentOptions {
        checkpoint_every: settings.checkpoint_every,
        jobs: settings.jobs,
    };
    let train_log_path = settings.out.join("train_trajectories.jsonl");
    let outcome = agent::run_experiment(
        &train,
        &test,
        &config,
        &*backend,
        &bundle,
        &mut memory,
        &options,
        Some(&memory_path),
    );
    let outcome = match outcome {
        Ok(o) => o,
        Err(f) => {
            write_trajectories(&train_log_path, &f.train_log)?;
            write_trajectories(&settings.out.join("test_trajectories.jsonl"), &f.test_log)?;
            return Err(f.error.into());
        }
    };
    write_trajectories(&train_log_path, &outcome.train_log)?;
    let mut outputs = vec![memory_path, train_log_path];
    outputs.extend(write_run_outputs(
        &settings.out,
        &outcome.report,
        &outcome.test_log,
    )?);
    if settings.checkpoint_every.is_some() {
        let curve = evaluation::training_curve(&outcome.curve)?;
        let curve_path = settings.out.join("curve.tsv");
        write_text(&curve_path, &curve.to_tsv())?;
        outputs.push(curve_path);
    }
    write_manifest(
        &settings.out,
        "run",
        settings.seed,
        &settings,
        &inputs,
        &outputs,
    )?;
    print!(
        "{}",
        evaluation::render_aligned(&evaluation::variant_rows(&[outcome.report])?)
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let base = read_report(&args.base)?;
    let treated = read_report(&args.treated)?;
    let buckets = evaluation::improvement_analysis(&base, &treated)?;
    ensure_dir(&args.out)?;
    let rows = evaluation::bucket_rows(&buckets);
    let tsv = args.out.join("buckets.tsv");
    let txt = args.out.join("buckets.txt");
    let acc = evaluation::variant_rows(&[base, treated])?;
    write_text(&tsv, &evaluation::render_tsv(&rows))?;
    let text = format!(
        "{}\n{}",
        evaluation::render_aligned(&acc),
        evaluation::render_aligned(&rows)
    );
    write_text(&txt, &text)?;
    write_manifest(
        &args.out,
        "eval",
        0,
        &(),
        &[args.base.clone(), args.treated.clone()],
        &[tsv, txt],
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let reports = args
        .reports
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>, _>>()?;
    ensure_dir(&args.out)?;
    let variants = evaluation::variant_rows(&reports)?;
    let eff = evaluation::efficiency_rows(&reports)?;
    let variants_tsv = args.out.join("variants.tsv");
    let eff_tsv = args.out.join("efficiency.tsv");
    let txt = args.out.join("report.txt");
    write_text(&variants_tsv, &evaluation::render_tsv(&variants))?;
    write_text(&eff_tsv, &evaluation::render_tsv(&eff))?;
    let text = format!(
        "{}\n{}",
        evaluation::render_aligned(&variants),
        evaluation::render_aligned(&eff)
    );
    write_text(&txt, &text)?;
    write_manifest(
        &args.out,
        "report",
        0,
        &(),
        &args.reports,
        &[variants_tsv, eff_tsv, txt],
    )?;
    print!("{text}");
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Split(a) => cmd_split(a),
        Cmd::Train(a) => cmd_train(Settings::resolve(a)?),
        Cmd::Test(a) => cmd_test(Settings::resolve(a)?),
        Cmd::Run(a) => cmd_run(Settings::resolve(a)?),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("expnote: {e}");
            e.exit_code()
        }
    }
}
