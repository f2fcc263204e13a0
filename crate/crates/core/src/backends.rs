//! Completion backends: a live chat-completion HTTP client, a scripted
//! stand-in for golden tests, and a record/replay cassette.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend failure after {attempts} attempt(s): {reason}")]
    Failure { attempts: u32, reason: String },
    #[error("no script entry matches the last user message: {0:?}")]
    ScriptMiss(String),
    #[error("cassette has no reply for request digest {0}")]
    CassetteMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at {path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    #[serde(rename = "model")]
    pub model_name: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model_name: model_name.into(),
            messages,
            temperature: 0.0,
            max_tokens: 512,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |s: &str| Err(BackendError::InvalidRequest(s.to_string()));
        match self.messages.last() {
            None => bad("messages must not be empty"),
            Some(m) if m.role != Role::User => bad("last message must come from the user"),
            _ if self.temperature.is_nan() || self.temperature < 0.0 => {
                bad("temperature must be >= 0")
            }
            _ if self.max_tokens == 0 => bad("max_tokens must be positive"),
            _ => Ok(()),
        }
    }

    fn last_user(&self) -> &str {
        self.messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default()
    }

    /// SHA-256 over the canonical JSON encoding of the message list.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.messages).expect("messages serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Uniform completion interface; implementations are shared across test episodes.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BackendError + '_ {
    move |source| BackendError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BackendError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| BackendError::Format {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Substring looked up in the last user message. An empty matcher matches anything.
    pub matcher: String,
    pub reply: String,
    #[serde(default)]
    pub consume_once: bool,
}

impl ScriptEntry {
    pub fn new(matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: matcher.into(),
            reply: reply.into(),
            consume_once: false,
        }
    }

    pub fn once(matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            consume_once: true,
            ..Self::new(matcher, reply)
        }
    }
}

/// Returns the reply of the first live entry whose matcher occurs in the last
/// user message. Entries are checked in declaration order; `consume_once`
/// entries retire after their first use.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    consumed: Mutex<Vec<bool>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let consumed = Mutex::new(vec![false; entries.len()]);
        Self { entries, consumed }
    }

    /// Reads a JSON-lines script of `{matcher, reply, consume_once}` records.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(read_jsonl(path)?))
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let last = request.last_user();
        let mut consumed = self.consumed.lock().expect("script lock");
        let hit = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !consumed[*i] && last.contains(&e.matcher));
        match hit {
            Some((i, e)) => {
                if e.consume_once {
                    consumed[i] = true;
                }
                Ok(e.reply.clone())
            }
            None => Err(BackendError::ScriptMiss(last.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub request_digest: String,
    pub reply: String,
}

/// Replays recorded replies keyed by request digest.
#[derive(Debug, Clone, Default)]
pub struct CassetteBackend {
    replies: HashMap<String, String>,
}

impl CassetteBackend {
    pub fn from_records(records: impl IntoIterator<Item = CassetteRecord>) -> Self {
        let mut replies = HashMap::new();
        for r in records {
            // first recording wins, matching what replay of the original run saw
            replies.entry(r.request_digest).or_insert(r.reply);
        }
        Self { replies }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_records(read_jsonl::<CassetteRecord>(path)?))
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Backend for CassetteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let digest = request.digest();
        self.replies
            .get(&digest)
            .cloned()
            .ok_or(BackendError::CassetteMiss(digest))
    }
}

/// Wraps a backend and appends every exchange to a cassette file.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    sink: Mutex<File>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(&path))?;
        }
        let sink = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            inner,
            path,
            sink: Mutex::new(sink),
        })
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let reply = self.inner.complete(request)?;
        let record = CassetteRecord {
            request_digest: request.digest(),
            reply: reply.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.sink
            .lock()
            .expect("cassette lock")
            .write_all(line.as_bytes())
            .map_err(io_err(&self.path))?;
        Ok(reply)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub base_url: String,
    pub model_name: String,
    pub timeout_seconds: u64,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    /// Name of the environment variable holding the bearer credential.
    pub api_key_env: String,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            timeout_seconds: 60,
            max_in_flight: 4,
            max_attempts: 3,
            backoff_base_ms: 500,
            api_key_env: "EXPNOTE_API_KEY".into(),
        }
    }
}

impl LiveConfig {
    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("in-flight lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight lock");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

enum Attempt {
    Transient(String),
    Fatal(String),
}

/// Chat-completion client: POSTs `{model, messages, temperature, max_tokens}`
/// and reads `choices[0].message.content`. Transport errors, 429 and 5xx are
/// retried with exponential backoff.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: InFlight,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: LiveConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InFlight::new(config.max_in_flight);
        Self {
            config,
            api_key,
            agent,
            gate,
        }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn attempt(&self, url: &str, request: &ChatRequest) -> Result<String, Attempt> {
        let mut call = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(request)
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("http status {status}")));
        }
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(format!("http status {status}: {body}")));
        }
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("response has no choices[0].message.content".into()))
    }
}

impl Backend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let _permit = self.gate.acquire();
        let url = self.config.endpoint();
        let max = self.config.max_attempts.max(1);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, request) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(reason)) => {
                    return Err(BackendError::Failure { attempts, reason })
                }
                Err(Attempt::Transient(reason)) if attempts >= max => {
                    return Err(BackendError::Failure { attempts, reason })
                }
                Err(Attempt::Transient(_)) => {
                    let wait = self.config.backoff_base_ms << (attempts - 1);
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
}
