//! Episode orchestration.
//!
//! Training: the model answers, receives ground-truth feedback, then spends up
//! to `n_train` actions on THINK/NOTE. Testing: the harness runs RECALL on the
//! question itself, embeds what it finds, and the model answers within
//! `max_turns`. Memory is read-only during testing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, ChatRequest, Message};
use crate::datasets::TaskInstance;
use crate::evaluation::{CaseOutcome, RunReport};
use crate::memory::{MemoryError, MemoryStore, NoteMode, Polarity, RecallFilter, Retriever};
use crate::protocol::{self, Command, PromptBundle, ProtocolError, FORMAT_REMINDER};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_N_TRAIN: usize = 4;
pub const DEFAULT_MAX_TURNS: usize = 8;

const ANSWER_REMINDER: &str =
    "Your reply did not contain an answer. Reply with ANSWER[your answer] at the start of a line.";
const THINK_ACK: &str = "OK.";
const TEST_THINK_ACK: &str = "OK. Give your final answer with ANSWER[...] when you are ready.";
const TRAIN_RECALL_REJECTED: &str = "RECALL is not available during training.";
const TEST_RECALL_REJECTED: &str =
    "RECALL has already been executed for you; use the recalled experiences above.";
const TEST_NOTE_REJECTED: &str = "NOTE is not available during testing.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("instance {0:?} appears in both the train and test sets")]
    OverlappingIds(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Disabled,
    Case,
    Positive,
    Negative,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::Disabled,
        Variant::Case,
        Variant::Positive,
        Variant::Negative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Disabled => "disabled",
            Variant::Case => "case",
            Variant::Positive => "positive",
            Variant::Negative => "negative",
        }
    }

    /// How training stores notes under this variant.
    pub fn note_mode(self) -> NoteMode {
        match self {
            Variant::Case => NoteMode::Case,
            _ => NoteMode::Abstract,
        }
    }

    /// Which experiences test-time retrieval may return; `None` means retrieval is off.
    pub fn recall_filter(self) -> Option<RecallFilter> {
        match self {
            Variant::Disabled => None,
            Variant::Full => Some(RecallFilter::default()),
            Variant::Case => Some(RecallFilter {
                polarity: None,
                mode: Some(NoteMode::Case),
            }),
            Variant::Positive => Some(RecallFilter {
                polarity: Some(Polarity::Positive),
                mode: None,
            }),
            Variant::Negative => Some(RecallFilter {
                polarity: Some(Polarity::Negative),
                mode: None,
            }),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown variant {s:?} (expected full, disabled, case, positive or negative)"
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub k: usize,
    pub n_train: usize,
    pub max_turns: usize,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            k: DEFAULT_K,
            n_train: DEFAULT_N_TRAIN,
            max_turns: DEFAULT_MAX_TURNS,
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

impl VariantConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.k == 0 {
            return Err(AgentError::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_turns == 0 {
            return Err(AgentError::InvalidConfig(
                "max_turns must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn request(&self, messages: &[Message]) -> ChatRequest {
        ChatRequest {
            model_name: self.model_name.clone(),
            messages: messages.to_vec(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub prompt_sent: String,
    pub raw_reply: String,
    pub parsed_command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instance_id: String,
    pub phase: Phase,
    pub steps: Vec<Step>,
    pub prediction: Option<String>,
    /// Train phase: the verdict on the answer given before feedback.
    pub correct_before_feedback: Option<bool>,
    /// Test phase: the verdict on the final prediction.
    pub correct: Option<bool>,
    pub feedback: Option<String>,
    pub retrieved_experience_ids: Vec<u64>,
    pub noted_experience_ids: Vec<u64>,
}

impl Trajectory {
    fn start(instance: &TaskInstance, phase: Phase) -> Self {
        Self {
            instance_id: instance.id.clone(),
            phase,
            steps: Vec::new(),
            prediction: None,
            correct_before_feedback: None,
            correct: None,
            feedback: None,
            retrieved_experience_ids: Vec::new(),
            noted_experience_ids: Vec::new(),
        }
    }
}

/// A running multi-turn exchange that records every step.
struct Conversation<'a, B: ?Sized> {
    backend: &'a B,
    config: &'a VariantConfig,
    messages: Vec<Message>,
}

impl<B: Backend + ?Sized> Conversation<'_, B> {
    fn turn(&mut self, traj: &mut Trajectory) -> Result<Option<Command>, BackendError> {
        let prompt_sent = self
            .messages
            .last()
            .map(|m| m.content.clone())
            .unwrap_or_default();
        let reply = self
            .backend
            .complete(&self.config.request(&self.messages))?;
        let parsed = protocol::parse_action(&reply).ok();
        self.messages.push(Message::assistant(reply.clone()));
        traj.steps.push(Step {
            prompt_sent,
            raw_reply: reply,
            parsed_command: parsed.clone(),
        });
        Ok(parsed)
    }

    fn say(&mut self, text: impl Into<String>) {
        self.messages.push(Message::user(text));
    }
}

/// One training case: answer, feedback, then up to `n_train` reflection actions.
pub fn run_train_episode<B: Backend + ?Sized>(
    instance: &TaskInstance,
    memory: &mut MemoryStore,
    backend: &B,
    bundle: &PromptBundle,
    config: &VariantConfig,
) -> Result<Trajectory, AgentError> {
    let mut traj = Trajectory::start(instance, Phase::Train);
    let mut convo = Conversation {
        backend,
        config,
        messages: vec![Message::user(
            bundle.render_train_prompt(&instance.question)?,
        )],
    };

    let mut reminded = false;
    loop {
        match convo.turn(&mut traj)? {
            Some(Command::Answer { answer }) => {
                traj.prediction = Some(answer);
                break;
            }
            _ if !reminded => {
                reminded = true;
                convo.say(ANSWER_REMINDER);
            }
            _ => break,
        }
    }

    let correct = traj
        .prediction
        .as_deref()
        .is_some_and(|p| protocol::judge(p, &instance.answer));
    traj.correct_before_feedback = Some(correct);
    let polarity = Polarity::from_verdict(correct);
    let fb = bundle.render_feedback(&protocol::feedback(
        traj.prediction.as_deref().unwrap_or_default(),
        &instance.answer,
        correct,
    ))?;
    traj.feedback = Some(fb.clone());
    convo.say(fb);

    let mode = config.variant.note_mode();
    for _ in 0..config.n_train {
        let reply = match convo.turn(&mut traj)? {
            Some(Command::Answer { .. }) => break,
            Some(Command::Think { .. }) => THINK_ACK.to_string(),
            Some(Command::Recall { .. }) => TRAIN_RECALL_REJECTED.to_string(),
            Some(Command::Note { key, value }) => {
                let value = match mode {
                    NoteMode::Abstract => value,
                    NoteMode::Case => format!("Q: {} A: {}", instance.question, instance.answer),
                };
                let exp = memory.note(&key, &value, polarity, &instance.id, mode)?;
                traj.noted_experience_ids.push(exp.id);
                format!("Experience noted under [{}].", exp.key)
            }
            None => FORMAT_REMINDER.to_string(),
        };
        convo.say(reply);
    }
    Ok(traj)
}

/// One test case. Retrieval runs in the harness before the model is asked.
pub fn run_test_episode<B: Backend + ?Sized, R: Retriever + ?Sized>(
    instance: &TaskInstance,
    memory: &R,
    backend: &B,
    bundle: &PromptBundle,
    config: &VariantConfig,
) -> Result<Trajectory, AgentError> {
    let mut traj = Trajectory::start(instance, Phase::Test);
    let retrieved: Vec<_> = match config.variant.recall_filter() {
        Some(filter) => memory
            .retrieve(&instance.question, config.k, filter)
            .into_iter()
            .map(|r| r.experience)
            .collect(),
        None => Vec::new(),
    };
    traj.retrieved_experience_ids = retrieved.iter().map(|e| e.id).collect();
    let mut convo = Conversation {
        backend,
        config,
        messages: vec![Message::user(
            bundle.render_test_prompt(&instance.question, &retrieved)?,
        )],
    };

    let mut reminded = false;
    while traj.steps.len() < config.max_turns {
        let reply = match convo.turn(&mut traj)? {
            Some(Command::Answer { answer }) => {
                traj.prediction = Some(answer);
                break;
            }
            Some(Command::Think { .. }) => TEST_THINK_ACK,
            Some(Command::Recall { .. }) => TEST_RECALL_REJECTED,
            Some(Command::Note { .. }) => TEST_NOTE_REJECTED,
            None if !reminded => {
                reminded = true;
                FORMAT_REMINDER
            }
            None => break,
        };
        convo.say(reply);
    }
    traj.correct = Some(
        traj.prediction
            .as_deref()
            .is_some_and(|p| protocol::judge(p, &instance.answer)),
    );
    Ok(traj)
}

/// A pass that stopped early, with the trajectories completed before the failure.
#[derive(Debug)]
pub struct PassFailure {
    pub error: AgentError,
    pub completed: Vec<Trajectory>,
}

impl fmt::Display for PassFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} completed episode(s))",
            self.error,
            self.completed.len()
        )
    }
}

impl std::error::Error for PassFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Sequential training over `train` in dataset order. When `journal` is set
/// every new experience is appended to that file as soon as it is noted.
pub fn run_train_pass<B: Backend + ?Sized>(
    train: &[TaskInstance],
    memory: &mut MemoryStore,
    backend: &B,
    bundle: &PromptBundle,
    config: &VariantConfig,
    journal: Option<&Path>,
) -> Result<Vec<Trajectory>, PassFailure> {
    let mut log = Vec::with_capacity(train.len());
    for inst in train {
        let traj = match run_train_episode(inst, memory, backend, bundle, config) {
            Ok(t) => t,
            Err(error) => {
                return Err(PassFailure {
                    error,
                    completed: log,
                })
            }
        };
        if let Some(path) = journal {
            for id in &traj.noted_experience_ids {
                let exp = memory.get(*id).expect("noted experience is stored");
                if let Err(e) = MemoryStore::append_record(path, exp) {
                    return Err(PassFailure {
                        error: e.into(),
                        completed: log,
                    });
                }
            }
        }
        log.push(traj);
    }
    Ok(log)
}

/// Runs every test episode against read-only memory, on up to `jobs` threads.
/// Results come back in dataset order regardless of scheduling.
pub fn run_test_pass<B: Backend + ?Sized>(
    test: &[TaskInstance],
    memory: &MemoryStore,
    backend: &B,
    bundle: &PromptBundle,
    config: &VariantConfig,
    jobs: usize,
) -> Result<(RunReport, Vec<Trajectory>), PassFailure> {
    let fail = |error| PassFailure {
        error,
        completed: Vec::new(),
    };
    config.validate().map_err(fail)?;
    let slots: Vec<Mutex<Option<Result<Trajectory, AgentError>>>> =
        test.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let worker = || loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(inst) = test.get(i) else { break };
        let res = run_test_episode(inst, memory, backend, bundle, config);
        if res.is_err() {
            stop.store(true, Ordering::SeqCst);
        }
        *slots[i].lock().expect("slot lock") = Some(res);
    };
    let jobs = jobs.clamp(1, test.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }

    let mut log = Vec::with_capacity(test.len());
    let mut failure = None;
    for slot in slots {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(t)) => log.push(t),
            Some(Err(e)) if failure.is_none() => failure = Some(e),
            _ => {}
        }
    }
    if let Some(error) = failure {
        return Err(PassFailure {
            error,
            completed: log,
        });
    }
    let per_case: BTreeMap<String, CaseOutcome> = log
        .iter()
        .map(|t| {
            (
                t.instance_id.clone(),
                CaseOutcome {
                    prediction: t.prediction.clone(),
                    correct: t.correct.unwrap_or(false),
                },
            )
        })
        .collect();
    let memory_count = config
        .variant
        .recall_filter()
        .map_or(0, |f| memory.count_where(f));
    Ok((RunReport::new(config.variant, memory_count, per_case), log))
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Evaluate the test set after every `m` training samples (and at 0).
    pub checkpoint_every: Option<usize>,
    pub jobs: usize,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub report: RunReport,
    pub train_log: Vec<Trajectory>,
    pub test_log: Vec<Trajectory>,
    /// `(training samples seen, test accuracy)`, ending with the final report.
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug)]
pub struct ExperimentFailure {
    pub error: AgentError,
    pub train_log: Vec<Trajectory>,
    pub test_log: Vec<Trajectory>,
}

impl fmt::Display for ExperimentFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for ExperimentFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn accuracy_of(report: &RunReport) -> f64 {
    report.accuracy().unwrap_or(0.0)
}

/// Training pass then testing pass. The disabled variant skips training.
/// On failure `memory` keeps every experience noted so far.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment<B: Backend + ?Sized>(
    train: &[TaskInstance],
    test: &[TaskInstance],
    config: &VariantConfig,
    backend: &B,
    bundle: &PromptBundle,
    memory: &mut MemoryStore,
    options: &ExperimentOptions,
    journal: Option<&Path>,
) -> Result<ExperimentOutcome, ExperimentFailure> {
    let early = |error| ExperimentFailure {
        error,
        train_log: Vec::new(),
        test_log: Vec::new(),
    };
    config.validate().map_err(early)?;
    if options.checkpoint_every == Some(0) {
        return Err(early(AgentError::InvalidConfig(
            "checkpoint interval must be at least 1".into(),
        )));
    }
    let train_ids: HashSet<&str> = train.iter().map(|t| t.id.as_str()).collect();
    if let Some(dup) = test.iter().find(|t| train_ids.contains(t.id.as_str())) {
        return Err(early(AgentError::OverlappingIds(dup.id.clone())));
    }

    let train = if config.variant == Variant::Disabled {
        &[][..]
    } else {
        train
    };
    let jobs = options.jobs.max(1);
    let mut train_log = Vec::new();
    let mut curve = Vec::new();
    let chunk = options.checkpoint_every.unwrap_or(train.len().max(1));

    let mut seen = 0;
    loop {
        if options.checkpoint_every.is_some() && seen < train.len() {
            match run_test_pass(test, memory, backend, bundle, config, jobs) {
                Ok((r, _)) => curve.push((seen, accuracy_of(&r))),
                Err(f) => {
                    return Err(ExperimentFailure {
                        error: f.error,
                        train_log,
                        test_log: f.completed,
                    })
                }
            }
        }
        if seen >= train.len() {
            break;
        }
        let end = (seen + chunk).min(train.len());
        match run_train_pass(&train[seen..end], memory, backend, bundle, config, journal) {
            Ok(log) => train_log.extend(log),
            Err(f) => {
                train_log.extend(f.completed);
                return Err(ExperimentFailure {
                    error: f.error,
                    train_log,
                    test_log: Vec::new(),
                });
            }
        }
        seen = end;
    }

    match run_test_pass(test, memory, backend, bundle, config, jobs) {
        Ok((report, test_log)) => {
            curve.push((seen, accuracy_of(&report)));
            Ok(ExperimentOutcome {
                report,
                train_log,
                test_log,
                curve,
            })
        }
        Err(f) => Err(ExperimentFailure {
            error: f.error,
            train_log,
            test_log: f.completed,
        }),
    }
}
